//! Rating prediction: four embedding towers, a shared predictor head, the
//! cross-entropy rating loss, the weighted alignment objective, and Adam.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndmath::{Graph, Matrix, SparseRows, Var};
use crate::ot::{vertical_loss, vertical_loss_node, SinkhornConfig};
use crate::subspace::{horizontal_loss, horizontal_loss_node, SelfExpressionConfig};
use crate::typical::{select_typical_samples, typical_samples_node, SelectionProblem};

/// Predictions are clamped to `[PRED_CLAMP, 1 − PRED_CLAMP]` before logs.
pub const PRED_CLAMP: f64 = 1e-7;
pub const DEFAULT_LAMBDA_O: f64 = 0.5;
pub const DEFAULT_LAMBDA_A: f64 = 0.8;

/// Widths shared by all towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerDims {
    pub d_id: usize,
    pub d_hist: usize,
    pub d_rev: usize,
    /// Hidden width between the two fusion layers.
    pub d_fuse: usize,
    /// Output embedding width.
    pub d_out: usize,
}

impl TowerDims {
    pub fn uniform(width: usize) -> Self {
        Self {
            d_id: width,
            d_hist: width,
            d_rev: width,
            d_fuse: width,
            d_out: width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    /// `entities × d_id`.
    pub id_table: Matrix,
    /// `history_width × d_hist`.
    pub history_weight: Matrix,
    pub history_bias: Matrix,
    pub fuse1_weight: Matrix,
    pub fuse1_bias: Matrix,
    pub fuse2_weight: Matrix,
    pub fuse2_bias: Matrix,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..=bound))
}

impl TowerParams {
    pub fn init(rng: &mut ChaCha8Rng, entities: usize, history_width: usize, dims: TowerDims) -> Self {
        let fuse_in = dims.d_id + dims.d_hist + dims.d_rev;
        Self {
            id_table: glorot(rng, entities, dims.d_id),
            history_weight: glorot(rng, history_width, dims.d_hist),
            history_bias: Matrix::zeros(1, dims.d_hist),
            fuse1_weight: glorot(rng, fuse_in, dims.d_fuse),
            fuse1_bias: Matrix::zeros(1, dims.d_fuse),
            fuse2_weight: glorot(rng, dims.d_fuse, dims.d_out),
            fuse2_bias: Matrix::zeros(1, dims.d_out),
        }
    }

    pub fn entities(&self) -> usize {
        self.id_table.rows()
    }

    pub fn history_width(&self) -> usize {
        self.history_weight.rows()
    }

    pub fn d_rev(&self) -> usize {
        self.fuse1_weight.rows() - self.id_table.cols() - self.history_weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.fuse2_weight.cols()
    }

    const NAMES: [&'static str; 7] = [
        "id_table",
        "history_weight",
        "history_bias",
        "fuse1_weight",
        "fuse1_bias",
        "fuse2_weight",
        "fuse2_bias",
    ];

    fn tensors(&self) -> [&Matrix; 7] {
        [
            &self.id_table,
            &self.history_weight,
            &self.history_bias,
            &self.fuse1_weight,
            &self.fuse1_bias,
            &self.fuse2_weight,
            &self.fuse2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.id_table,
            &mut self.history_weight,
            &mut self.history_bias,
            &mut self.fuse1_weight,
            &mut self.fuse1_bias,
            &mut self.fuse2_weight,
            &mut self.fuse2_bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    /// `2D × hidden`.
    pub hidden_weight: Matrix,
    pub hidden_bias: Matrix,
    /// `hidden × 1`.
    pub out_weight: Matrix,
    pub out_bias: Matrix,
}

impl PredictorParams {
    pub fn init(rng: &mut ChaCha8Rng, width: usize, hidden: usize) -> Self {
        Self {
            hidden_weight: glorot(rng, 2 * width, hidden),
            hidden_bias: Matrix::zeros(1, hidden),
            out_weight: glorot(rng, hidden, 1),
            out_bias: Matrix::zeros(1, 1),
        }
    }

    const NAMES: [&'static str; 4] = ["hidden_weight", "hidden_bias", "out_weight", "out_bias"];

    fn tensors(&self) -> [&Matrix; 4] {
        [&self.hidden_weight, &self.hidden_bias, &self.out_weight, &self.out_bias]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.out_weight,
            &mut self.out_bias,
        ]
    }
}

/// Entity counts of one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainSize {
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub source_user: TowerParams,
    pub source_item: TowerParams,
    pub target_user: TowerParams,
    pub target_item: TowerParams,
    pub head: PredictorParams,
}

impl ModelParams {
    /// Towers and head initialized in a fixed order from `seed`.
    pub fn init(source: DomainSize, target: DomainSize, dims: TowerDims, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            source_user: TowerParams::init(&mut rng, source.users, source.items, dims),
            source_item: TowerParams::init(&mut rng, source.items, source.users, dims),
            target_user: TowerParams::init(&mut rng, target.users, target.items, dims),
            target_item: TowerParams::init(&mut rng, target.items, target.users, dims),
            head: PredictorParams::init(&mut rng, dims.d_out, hidden),
        }
    }

    fn towers(&self) -> [(&'static str, &TowerParams); 4] {
        [
            ("source_user", &self.source_user),
            ("source_item", &self.source_item),
            ("target_user", &self.target_user),
            ("target_item", &self.target_item),
        ]
    }

    /// Every parameter tensor with its qualified name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (tower, p) in self.towers() {
            for (name, m) in TowerParams::NAMES.iter().zip(p.tensors()) {
                out.push((format!("{tower}.{name}"), m));
            }
        }
        for (name, m) in PredictorParams::NAMES.iter().zip(self.head.tensors()) {
            out.push((format!("head.{name}"), m));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.source_user.tensors_mut());
        out.extend(self.source_item.tensors_mut());
        out.extend(self.target_user.tensors_mut());
        out.extend(self.target_item.tensors_mut());
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn output_width(&self) -> usize {
        self.source_user.output_width()
    }
}

/// Tower inputs for a batch of entities.
#[derive(Debug, Clone)]
pub struct EntityBatch {
    pub ids: Vec<usize>,
    /// Row-normalized multi-hot histories, one row per entry of `ids`.
    pub history: Rc<SparseRows>,
    /// `len × d_rev` review vectors.
    pub reviews: Matrix,
}

impl EntityBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A batch of user–item pairs. `labels` is empty for positive-only batches.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub users: EntityBatch,
    pub items: EntityBatch,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct TowerVars {
    id_table: Var,
    history_weight: Var,
    history_bias: Var,
    fuse1_weight: Var,
    fuse1_bias: Var,
    fuse2_weight: Var,
    fuse2_bias: Var,
}

impl TowerVars {
    fn record(g: &mut Graph, p: &TowerParams) -> Self {
        let [a, b, c, d, e, f, h] = p.tensors().map(|m| g.leaf(m.clone()));
        Self {
            id_table: a,
            history_weight: b,
            history_bias: c,
            fuse1_weight: d,
            fuse1_bias: e,
            fuse2_weight: f,
            fuse2_bias: h,
        }
    }

    fn vars(&self) -> [Var; 7] {
        [
            self.id_table,
            self.history_weight,
            self.history_bias,
            self.fuse1_weight,
            self.fuse1_bias,
            self.fuse2_weight,
            self.fuse2_bias,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct HeadVars {
    hidden_weight: Var,
    hidden_bias: Var,
    out_weight: Var,
    out_bias: Var,
}

impl HeadVars {
    fn record(g: &mut Graph, p: &PredictorParams) -> Self {
        let [a, b, c, d] = p.tensors().map(|m| g.leaf(m.clone()));
        Self {
            hidden_weight: a,
            hidden_bias: b,
            out_weight: c,
            out_bias: d,
        }
    }
}

/// Parameter leaves of a recorded model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    towers: [TowerVars; 4],
    head: HeadVars,
}

impl ModelVars {
    pub fn record(g: &mut Graph, params: &ModelParams) -> Self {
        Self {
            towers: [
                TowerVars::record(g, &params.source_user),
                TowerVars::record(g, &params.source_item),
                TowerVars::record(g, &params.target_user),
                TowerVars::record(g, &params.target_item),
            ],
            head: HeadVars::record(g, &params.head),
        }
    }

    /// Leaves in the order of [`ModelParams::named_tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.towers.iter().flat_map(|t| t.vars()).collect();
        out.extend([
            self.head.hidden_weight,
            self.head.hidden_bias,
            self.head.out_weight,
            self.head.out_bias,
        ]);
        out
    }
}

fn check_batch(batch: &EntityBatch, tower: &TowerParams) -> Result<()> {
    if let Some(&bad) = batch.ids.iter().find(|&&i| i >= tower.entities()) {
        return Err(Error::Input(format!(
            "entity index {bad} out of range for {} entities",
            tower.entities()
        )));
    }
    if batch.history.rows.len() != batch.len() || batch.history.cols != tower.history_width() {
        return Err(Error::Contract(format!(
            "history rows must be {}×{}, got {}×{}",
            batch.len(),
            tower.history_width(),
            batch.history.rows.len(),
            batch.history.cols
        )));
    }
    if batch.reviews.shape() != (batch.len(), tower.d_rev()) {
        return Err(Error::Contract(format!(
            "review vectors must be {}×{}, got {:?}",
            batch.len(),
            tower.d_rev(),
            batch.reviews.shape()
        )));
    }
    Ok(())
}

fn embed_node(g: &mut Graph, t: &TowerVars, batch: &EntityBatch) -> Var {
    let ids = g.gather_rows(t.id_table, &batch.ids);
    let hist_lin = g.sparse_matmul(batch.history.clone(), t.history_weight);
    let hist = g.add_row(hist_lin, t.history_bias);
    let reviews = g.leaf(batch.reviews.clone());
    let x = g.concat_cols(&[ids, hist, reviews]);
    let h_lin = g.matmul(x, t.fuse1_weight);
    let h_aff = g.add_row(h_lin, t.fuse1_bias);
    let h = g.tanh(h_aff);
    let out = g.matmul(h, t.fuse2_weight);
    g.add_row(out, t.fuse2_bias)
}

fn predict_node(g: &mut Graph, head: &HeadVars, u: Var, v: Var) -> Var {
    let x = g.concat_cols(&[u, v]);
    let h_lin = g.matmul(x, head.hidden_weight);
    let h_aff = g.add_row(h_lin, head.hidden_bias);
    let h = g.tanh(h_aff);
    let o_lin = g.matmul(h, head.out_weight);
    let o = g.add_row(o_lin, head.out_bias);
    let p = g.sigmoid(o);
    // keep saturated outputs inside the open interval
    g.clamp(p, f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Row `i` is `G(E[id_i] ⊕ F(history_i) ⊕ review_i)`.
pub fn embed_entities(batch: &EntityBatch, tower: &TowerParams) -> Result<Matrix> {
    check_batch(batch, tower)?;
    let mut g = Graph::new();
    let vars = TowerVars::record(&mut g, tower);
    let out = embed_node(&mut g, &vars, batch);
    Ok(g.value(out).clone())
}

/// Head applied row-wise to `u_i ⊕ v_i`; values in `(0, 1)`.
pub fn predict_ratings(users: &Matrix, items: &Matrix, head: &PredictorParams) -> Result<Vec<f64>> {
    if users.shape() != items.shape() || 2 * users.cols() != head.hidden_weight.rows() {
        return Err(Error::Contract(format!(
            "predictor expects two N×{} inputs, got {:?} and {:?}",
            head.hidden_weight.rows() / 2,
            users.shape(),
            items.shape()
        )));
    }
    let mut g = Graph::new();
    let vars = HeadVars::record(&mut g, head);
    let (uv, vv) = (g.leaf(users.clone()), g.leaf(items.clone()));
    let p = predict_node(&mut g, &vars, uv, vv);
    Ok(g.value(p).clone().into_vec())
}

fn rating_loss_node(g: &mut Graph, pred_s: Var, truth_s: &[f64], pred_t: Var) -> Var {
    let ps = g.clamp(pred_s, PRED_CLAMP, 1.0 - PRED_CLAMP);
    let log_p = g.log(ps);
    let neg = g.scale(ps, -1.0);
    let one_minus = g.offset(neg, 1.0);
    let log_q = g.log(one_minus);
    let r = g.leaf(Matrix::column_vector(truth_s.to_vec()));
    let r_neg = g.scale(r, -1.0);
    let one_minus_r = g.offset(r_neg, 1.0);
    let a = g.mul(r, log_p);
    let b = g.mul(one_minus_r, log_q);
    let ab = g.add(a, b);
    let source = g.sum(ab);
    let pt = g.clamp(pred_t, PRED_CLAMP, 1.0 - PRED_CLAMP);
    let log_t = g.log(pt);
    let target = g.sum(log_t);
    let both = g.add(source, target);
    g.scale(both, -1.0)
}

/// `−Σ_S [r log r̂ + (1−r) log(1−r̂)] − Σ_T log r̂` with clamped predictions.
pub fn rating_loss(pred_s: &[f64], truth_s: &[f64], pred_t: &[f64]) -> Result<f64> {
    if pred_s.len() != truth_s.len() {
        return Err(Error::Contract(format!(
            "{} source predictions for {} labels",
            pred_s.len(),
            truth_s.len()
        )));
    }
    if truth_s.iter().any(|&r| r != 0.0 && r != 1.0) {
        return Err(Error::Contract("source labels must be 0 or 1".into()));
    }
    let clamp = |p: f64| p.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    let source: f64 = pred_s
        .iter()
        .zip(truth_s)
        .map(|(&p, &r)| r * clamp(p).ln() + (1.0 - r) * (1.0 - clamp(p)).ln())
        .sum();
    let target: f64 = pred_t.iter().map(|&p| clamp(p).ln()).sum();
    Ok(-(source + target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_o: f64,
    pub lambda_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_o: DEFAULT_LAMBDA_O,
            lambda_a: DEFAULT_LAMBDA_A,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_o: f64, lambda_a: f64) -> Result<Self> {
        if !(lambda_o >= 0.0 && lambda_a >= 0.0) {
            return Err(Error::Contract(format!(
                "loss weights must be nonnegative, got {lambda_o} and {lambda_a}"
            )));
        }
        Ok(Self { lambda_o, lambda_a })
    }
}

/// `L_C + λ_O·L_O + λ_A·L_A`.
pub fn total_loss(l_c: f64, l_o: f64, l_a: f64, w: LossWeights) -> f64 {
    l_c + w.lambda_o * l_o + w.lambda_a * l_a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .named_tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One bias-corrected update of every tensor.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &[Matrix]) -> Result<()> {
        let tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.first.len() {
            return Err(Error::Contract("gradient list does not match parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let corr1 = 1.0 - c.beta1.powi(t);
        let corr2 = 1.0 - c.beta2.powi(t);
        for (((p, g), m), v) in tensors
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            if p.shape() != g.shape() || m.shape() != p.shape() {
                return Err(Error::Contract("moment shapes must match parameters".into()));
            }
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    /// Typical samples per attribution.
    pub proxies: usize,
    pub alpha: f64,
    pub sinkhorn: SinkhornConfig,
    pub self_expression: SelfExpressionConfig,
}

impl ObjectiveConfig {
    pub fn new(proxies: usize) -> Self {
        Self {
            weights: LossWeights::default(),
            proxies,
            alpha: 0.1,
            sinkhorn: SinkhornConfig::default(),
            self_expression: SelfExpressionConfig::new(0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub l_c: f64,
    pub l_o: f64,
    pub l_a: f64,
    pub total: f64,
}

/// The recorded joint objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub params: ModelVars,
    pub total: Var,
    pub l_c: f64,
    pub l_o: f64,
    pub l_a: f64,
    /// Batch embeddings: source users, source items, target users, target items.
    pub embeddings: [Var; 4],
}

/// Records the joint objective on one source and one target batch.
///
/// Alignment terms with zero weight are evaluated for reporting but are left
/// out of the recorded graph.
pub fn record_objective(
    g: &mut Graph,
    params: &ModelParams,
    source: &PairBatch,
    target: &PairBatch,
    cfg: &ObjectiveConfig,
) -> Result<Objective> {
    check_batch(&source.users, &params.source_user)?;
    check_batch(&source.items, &params.source_item)?;
    check_batch(&target.users, &params.target_user)?;
    check_batch(&target.items, &params.target_item)?;
    let n = source.users.len();
    if source.items.len() != n || source.labels.len() != n {
        return Err(Error::Contract("source batch parts differ in length".into()));
    }
    if target.users.len() != target.items.len() {
        return Err(Error::Contract("target batch parts differ in length".into()));
    }
    let vars = ModelVars::record(g, params);
    let [su, si, tu, ti] = vars.towers;
    let us = embed_node(g, &su, &source.users);
    let vs = embed_node(g, &si, &source.items);
    let ut = embed_node(g, &tu, &target.users);
    let vt = embed_node(g, &ti, &target.items);
    let pred_s = predict_node(g, &vars.head, us, vs);
    let pred_t = predict_node(g, &vars.head, ut, vt);
    let lc_node = rating_loss_node(g, pred_s, &source.labels, pred_t);
    let l_c = g.value(lc_node).item();

    let w = cfg.weights;
    let mut total = lc_node;
    let l_o = if w.lambda_o > 0.0 {
        let mut proxies = [us; 4];
        for (slot, z) in proxies.iter_mut().zip([us, ut, vs, vt]) {
            *slot = typical_samples_node(g, z, cfg.proxies, cfg.alpha)?.0;
        }
        let lo = vertical_loss_node(g, (proxies[0], proxies[1]), (proxies[2], proxies[3]), &cfg.sinkhorn)?;
        let weighted = g.scale(lo, w.lambda_o);
        total = g.add(total, weighted);
        g.value(lo).item()
    } else {
        let m: Vec<Matrix> = [us, ut, vs, vt]
            .iter()
            .map(|&z| {
                select_typical_samples(&SelectionProblem::new(g.value(z).clone(), cfg.proxies, cfg.alpha))
                    .map(|r| r.proxies)
            })
            .collect::<Result<_>>()?;
        vertical_loss(&m[0], &m[1], &m[2], &m[3], &cfg.sinkhorn)?
    };
    let l_a = if w.lambda_a > 0.0 {
        let la = horizontal_loss_node(g, (us, ut), (vs, vt), &cfg.self_expression)?;
        let weighted = g.scale(la, w.lambda_a);
        total = g.add(total, weighted);
        g.value(la).item()
    } else {
        horizontal_loss(g.value(us), g.value(ut), g.value(vs), g.value(vt), &cfg.self_expression)?
    };
    Ok(Objective {
        params: vars,
        total,
        l_c,
        l_o,
        l_a,
        embeddings: [us, vs, ut, vt],
    })
}

/// One forward pass, one backward pass and one Adam update. On a non-finite
/// loss or gradient the parameters are left untouched.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    source: &PairBatch,
    target: &PairBatch,
    cfg: &ObjectiveConfig,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let obj = record_objective(&mut g, params, source, target, cfg)?;
    let total = total_loss(obj.l_c, obj.l_o, obj.l_a, cfg.weights);
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at step {}: L_C={} L_O={} L_A={}",
            adam.step + 1,
            obj.l_c,
            obj.l_o,
            obj.l_a
        )));
    }
    let mut grads = g.backward(obj.total)?;
    let grads: Vec<Matrix> = obj.params.all().into_iter().map(|v| grads.take(v)).collect();
    if let Some(i) = grads.iter().position(|m| !m.is_finite()) {
        let name = &params.named_tensors()[i].0;
        return Err(Error::Numerical(format!(
            "non-finite gradient for {name} at step {}",
            adam.step + 1
        )));
    }
    adam.apply(params, &grads)?;
    Ok(LossReport {
        step: adam.step,
        l_c: obj.l_c,
        l_o: obj.l_o,
        l_a: obj.l_a,
        total,
    })
}
