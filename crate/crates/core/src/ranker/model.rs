//! Two-tower click model with a factorization machine head.
//!
//! One tower is a two-layer MLP over behavioral and lexical dense features,
//! the other is a fixed block of n-gram embedding cosines; optional sparse
//! id embeddings join them, and a factorization machine plus a small MLP
//! turns the concatenation into a click probability. Everything is f64 and
//! the backward pass is written out by hand.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::NodeId;

use super::features::{ClickRecord, DenseFeatures, TRDenseFeatures};
use super::ngram::{
    embed_bag, hash_bag, ngrams, sparse_bucket, Embedding, HashedBag, SPARSE_BUCKETS, SPARSE_DIM,
    TEXT_BUCKETS, TEXT_DIM,
};

/// Width of each factorization machine factor.
pub const FM_FACTOR_DIM: usize = 16;
/// Hidden sizes of the behavioral tower.
pub const CTR_HIDDEN: usize = 256;
pub const CTR_OUT: usize = 128;
/// Hidden sizes of the scoring head.
pub const HEAD_HIDDEN1: usize = 64;
pub const HEAD_HIDDEN2: usize = 32;
/// Dropout probability after the first relu of each MLP.
pub const DROPOUT_P: f64 = 0.2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Predicted probabilities are clamped to this range inside the loss.
const P_CLAMP: f64 = 1e-7;
/// Number of cosine similarity features produced by the n-gram tower.
pub const NGRAM_COS_DIM: usize = 8;

/// Which feature groups the model consumes. Each variant fixes the input
/// layout, so checkpoints record it and refuse to load into a different
/// shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSetting {
    CtrOnly,
    TrOnly,
    CtrTr,
    NgramOnly,
    CtrNgram,
    CtrTrNgram,
}

impl AblationSetting {
    pub const ALL: [AblationSetting; 6] = [
        AblationSetting::CtrOnly,
        AblationSetting::TrOnly,
        AblationSetting::CtrTr,
        AblationSetting::NgramOnly,
        AblationSetting::CtrNgram,
        AblationSetting::CtrTrNgram,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationSetting::CtrOnly => "ctr_only",
            AblationSetting::TrOnly => "tr_only",
            AblationSetting::CtrTr => "ctr_tr",
            AblationSetting::NgramOnly => "ngram_only",
            AblationSetting::CtrNgram => "ctr_ngram",
            AblationSetting::CtrTrNgram => "ctr_tr_ngram",
        }
    }

    pub fn from_name(name: &str) -> Option<AblationSetting> {
        Self::ALL.into_iter().find(|s| s.as_str() == name)
    }

    pub(crate) fn tag(&self) -> u8 {
        Self::ALL.iter().position(|s| s == self).unwrap() as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<AblationSetting> {
        Self::ALL.get(tag as usize).copied()
    }

    /// Behavioral dense features feed the MLP tower.
    pub fn use_ctr_dense(&self) -> bool {
        !matches!(
            self,
            AblationSetting::TrOnly | AblationSetting::NgramOnly
        )
    }

    /// Lexical dense features (BM25 and friends) feed the MLP tower.
    pub fn use_tr_dense(&self) -> bool {
        matches!(
            self,
            AblationSetting::TrOnly | AblationSetting::CtrTr | AblationSetting::CtrTrNgram
        )
    }

    /// Region and city id embeddings are appended to the tower output.
    pub fn use_sparse(&self) -> bool {
        self.use_ctr_dense()
    }

    /// The n-gram cosine block is appended to the interaction input.
    pub fn use_ngram(&self) -> bool {
        matches!(
            self,
            AblationSetting::NgramOnly | AblationSetting::CtrNgram | AblationSetting::CtrTrNgram
        )
    }

    pub fn has_ctr_tower(&self) -> bool {
        self.use_ctr_dense() || self.use_tr_dense()
    }

    pub fn ctr_input_dim(&self) -> usize {
        let mut d = 0;
        if self.use_ctr_dense() {
            d += DenseFeatures::DIM;
        }
        if self.use_tr_dense() {
            d += TRDenseFeatures::DIM;
        }
        d
    }

    /// Width of the interaction input x: tower output, sparse embeddings,
    /// and cosine block, in that order.
    pub fn x_dim(&self) -> usize {
        let mut d = 0;
        if self.has_ctr_tower() {
            d += CTR_OUT;
        }
        if self.use_sparse() {
            d += 2 * SPARSE_DIM;
        }
        if self.use_ngram() {
            d += NGRAM_COS_DIM;
        }
        d
    }
}

/// How batch normalization layers compute their statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch; used during training.
    Batch,
    /// Stored running statistics; used at inference and for gradient
    /// checking, where per-sample independence matters.
    Fixed,
}

#[derive(Debug, Clone)]
struct Linear {
    w: Array2<f64>, // input x output
    b: Array1<f64>,
}

impl Linear {
    fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Linear {
        let normal = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("valid std");
        Linear {
            w: Array2::from_shape_fn((input, output), |_| normal.sample(rng)),
            b: Array1::zeros(output),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> BatchNorm {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

struct BnCtx {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>, // biased
}

fn bn_forward(bn: &BatchNorm, z: &Array2<f64>, mode: BnMode) -> (Array2<f64>, BnCtx) {
    let (mean, var) = match mode {
        BnMode::Batch => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = z - &mean;
            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            (mean, var)
        }
        BnMode::Fixed => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let xhat = (z - &mean) * &inv_std;
    let out = &xhat * &bn.gamma + &bn.beta;
    (
        out,
        BnCtx {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Returns (dz, dgamma, dbeta).
fn bn_backward(
    bn: &BatchNorm,
    ctx: &BnCtx,
    dout: &Array2<f64>,
    mode: BnMode,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (dout * &ctx.xhat).sum_axis(Axis(0));
    let dbeta = dout.sum_axis(Axis(0));
    let dxhat = dout * &bn.gamma;
    let dz = match mode {
        BnMode::Fixed => &dxhat * &ctx.inv_std,
        BnMode::Batch => {
            let m = dout.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &ctx.xhat).sum_axis(Axis(0));
            let inner = dxhat * m - &sum_dxhat - &ctx.xhat * &sum_dxhat_xhat;
            inner * &ctx.inv_std / m
        }
    };
    (dz, dgamma, dbeta)
}

/// Per-batch dropout masks; entries are 0 or 1/(1-p) so expectation is
/// preserved. `None` anywhere means the identity.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub ctr: Option<Array2<f64>>,  // batch x CTR_HIDDEN
    pub head: Option<Array2<f64>>, // batch x HEAD_HIDDEN1
}

/// A click record with text already tokenized, hashed, and deduplicated;
/// bags are shared between records of the same query or document.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub dense: [f64; DenseFeatures::DIM],
    pub tr_dense: [f64; TRDenseFeatures::DIM],
    pub region_bucket: usize,
    pub city_bucket: usize,
    pub q_uni: Rc<HashedBag>,
    pub q_bi: Rc<HashedBag>,
    pub t_uni: Rc<HashedBag>,
    pub t_bi: Rc<HashedBag>,
    pub b_uni: Rc<HashedBag>,
    pub b_bi: Rc<HashedBag>,
    pub label: f64,
}

/// Hashes every record's text once, sharing bags across repeated queries
/// and documents.
pub fn prepare_records(records: &[ClickRecord]) -> Vec<PreparedRecord> {
    type QueryBags = (Rc<HashedBag>, Rc<HashedBag>);
    type DocBags = (Rc<HashedBag>, Rc<HashedBag>, Rc<HashedBag>, Rc<HashedBag>);
    let mut queries: HashMap<&str, QueryBags> = HashMap::new();
    let mut docs: HashMap<NodeId, DocBags> = HashMap::new();
    records
        .iter()
        .map(|r| {
            let (q_uni, q_bi) = queries
                .entry(&r.query)
                .or_insert_with(|| {
                    (
                        Rc::new(hash_bag(&ngrams(&r.query, 1), TEXT_BUCKETS)),
                        Rc::new(hash_bag(&ngrams(&r.query, 2), TEXT_BUCKETS)),
                    )
                })
                .clone();
            let (t_uni, t_bi, b_uni, b_bi) = docs
                .entry(r.doc_id)
                .or_insert_with(|| {
                    (
                        Rc::new(hash_bag(&ngrams(&r.doc_title, 1), TEXT_BUCKETS)),
                        Rc::new(hash_bag(&ngrams(&r.doc_title, 2), TEXT_BUCKETS)),
                        Rc::new(hash_bag(&ngrams(&r.doc_body, 1), TEXT_BUCKETS)),
                        Rc::new(hash_bag(&ngrams(&r.doc_body, 2), TEXT_BUCKETS)),
                    )
                })
                .clone();
            PreparedRecord {
                dense: r.dense.0,
                tr_dense: r.tr_dense.as_array(),
                region_bucket: sparse_bucket(r.sparse.region_id),
                city_bucket: sparse_bucket(r.sparse.city_id),
                q_uni,
                q_bi,
                t_uni,
                t_bi,
                b_uni,
                b_bi,
                label: r.label as f64,
            }
        })
        .collect()
}

/// Gradient of one parameter block, in the block's flat layout.
#[derive(Debug, Clone)]
pub enum GradBlock {
    Dense(Vec<f64>),
    /// Embedding tables carry gradients only for the rows a batch touched.
    Rows {
        dim: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Gradients for every trainable block, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub blocks: BTreeMap<&'static str, GradBlock>,
}

impl Gradients {
    /// Flat-index lookup, used by the finite difference checks. Untouched
    /// embedding rows read as zero.
    pub fn get(&self, name: &str, idx: usize) -> f64 {
        match self.blocks.get(name) {
            Some(GradBlock::Dense(g)) => g[idx],
            Some(GradBlock::Rows { dim, rows }) => rows
                .get(&(idx / dim))
                .map_or(0.0, |row| row[idx % dim]),
            None => panic!("unknown gradient block {name}"),
        }
    }
}

#[derive(Debug, Clone)]
struct CtrTower {
    fc1: Linear,
    bn1: BatchNorm,
    fc2: Linear,
    bn2: BatchNorm,
}

#[derive(Debug, Clone)]
struct SparseTables {
    region: Embedding,
    city: Embedding,
}

#[derive(Debug, Clone)]
struct TextTables {
    q_uni: Embedding,
    q_bi: Embedding,
    d_title_uni: Embedding,
    d_title_bi: Embedding,
    d_body_uni: Embedding,
    d_body_bi: Embedding,
}

#[derive(Debug, Clone)]
struct Head {
    fc1: Linear,
    bn1: BatchNorm,
    fc2: Linear,
    bn2: BatchNorm,
    fc3: Linear,
}

#[derive(Debug, Clone)]
pub struct TwoTowerModel {
    setting: AblationSetting,
    ctr: Option<CtrTower>,
    sparse: Option<SparseTables>,
    text: Option<TextTables>,
    fm_w: Array1<f64>,
    fm_v: Array2<f64>, // x_dim x FM_FACTOR_DIM
    head: Head,
}

impl TwoTowerModel {
    /// Builds a model with deterministic seeded initialization: He normal
    /// for fully connected weights, N(0, 0.1) for embedding tables,
    /// N(0, 0.05) for factorization machine factors, zeros elsewhere.
    ///
    /// The query and document text tables of each n-gram order start as
    /// clones of one base draw. They are independent parameters from the
    /// first update on, but shared n-grams begin with identical rows, so
    /// the cosine block carries a lexical-overlap signal immediately
    /// instead of having to discover query↔document alignment from noise.
    pub fn new(setting: AblationSetting, seed: u64) -> TwoTowerModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = setting.use_ngram().then(|| {
            let uni = Embedding::random(TEXT_BUCKETS, TEXT_DIM, 0.1, &mut rng);
            let bi = Embedding::random(TEXT_BUCKETS, TEXT_DIM, 0.1, &mut rng);
            TextTables {
                q_uni: uni.clone(),
                q_bi: bi.clone(),
                d_title_uni: uni.clone(),
                d_title_bi: bi.clone(),
                d_body_uni: uni,
                d_body_bi: bi,
            }
        });
        let sparse = setting.use_sparse().then(|| SparseTables {
            region: Embedding::random(SPARSE_BUCKETS, SPARSE_DIM, 0.1, &mut rng),
            city: Embedding::random(SPARSE_BUCKETS, SPARSE_DIM, 0.1, &mut rng),
        });
        let ctr = setting.has_ctr_tower().then(|| CtrTower {
            fc1: Linear::new(setting.ctr_input_dim(), CTR_HIDDEN, &mut rng),
            bn1: BatchNorm::new(CTR_HIDDEN),
            fc2: Linear::new(CTR_HIDDEN, CTR_OUT, &mut rng),
            bn2: BatchNorm::new(CTR_OUT),
        });
        let x_dim = setting.x_dim();
        let fm_normal = Normal::new(0.0, 0.05).expect("valid std");
        let fm_w = Array1::zeros(x_dim);
        let fm_v = Array2::from_shape_fn((x_dim, FM_FACTOR_DIM), |_| fm_normal.sample(&mut rng));
        let head = Head {
            fc1: Linear::new(x_dim + 2, HEAD_HIDDEN1, &mut rng),
            bn1: BatchNorm::new(HEAD_HIDDEN1),
            fc2: Linear::new(HEAD_HIDDEN1, HEAD_HIDDEN2, &mut rng),
            bn2: BatchNorm::new(HEAD_HIDDEN2),
            fc3: Linear::new(HEAD_HIDDEN2, 1, &mut rng),
        };
        TwoTowerModel {
            setting,
            ctr,
            sparse,
            text,
            fm_w,
            fm_v,
            head,
        }
    }

    pub fn setting(&self) -> AblationSetting {
        self.setting
    }

    pub fn x_dim(&self) -> usize {
        self.setting.x_dim()
    }

    /// Trainable parameter blocks present under this setting, in canonical
    /// order.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        if self.text.is_some() {
            names.extend([
                "emb.q_uni",
                "emb.q_bi",
                "emb.d_title_uni",
                "emb.d_title_bi",
                "emb.d_body_uni",
                "emb.d_body_bi",
            ]);
        }
        if self.sparse.is_some() {
            names.extend(["emb.region", "emb.city"]);
        }
        if self.ctr.is_some() {
            names.extend([
                "ctr.fc1.w",
                "ctr.fc1.b",
                "ctr.bn1.gamma",
                "ctr.bn1.beta",
                "ctr.fc2.w",
                "ctr.fc2.b",
                "ctr.bn2.gamma",
                "ctr.bn2.beta",
            ]);
        }
        names.extend([
            "fm.w",
            "fm.v",
            "head.fc1.w",
            "head.fc1.b",
            "head.bn1.gamma",
            "head.bn1.beta",
            "head.fc2.w",
            "head.fc2.b",
            "head.bn2.gamma",
            "head.bn2.beta",
            "head.fc3.w",
            "head.fc3.b",
        ]);
        names
    }

    /// Non-trainable state saved with the model: batch norm running
    /// statistics.
    pub fn buffer_names(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        if self.ctr.is_some() {
            names.extend([
                "ctr.bn1.running_mean",
                "ctr.bn1.running_var",
                "ctr.bn2.running_mean",
                "ctr.bn2.running_var",
            ]);
        }
        names.extend([
            "head.bn1.running_mean",
            "head.bn1.running_var",
            "head.bn2.running_mean",
            "head.bn2.running_var",
        ]);
        names
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        Some(match name {
            "emb.q_uni" => &self.text.as_ref()?.q_uni.data,
            "emb.q_bi" => &self.text.as_ref()?.q_bi.data,
            "emb.d_title_uni" => &self.text.as_ref()?.d_title_uni.data,
            "emb.d_title_bi" => &self.text.as_ref()?.d_title_bi.data,
            "emb.d_body_uni" => &self.text.as_ref()?.d_body_uni.data,
            "emb.d_body_bi" => &self.text.as_ref()?.d_body_bi.data,
            "emb.region" => &self.sparse.as_ref()?.region.data,
            "emb.city" => &self.sparse.as_ref()?.city.data,
            "ctr.fc1.w" => self.ctr.as_ref()?.fc1.w.as_slice()?,
            "ctr.fc1.b" => self.ctr.as_ref()?.fc1.b.as_slice()?,
            "ctr.bn1.gamma" => self.ctr.as_ref()?.bn1.gamma.as_slice()?,
            "ctr.bn1.beta" => self.ctr.as_ref()?.bn1.beta.as_slice()?,
            "ctr.bn1.running_mean" => self.ctr.as_ref()?.bn1.running_mean.as_slice()?,
            "ctr.bn1.running_var" => self.ctr.as_ref()?.bn1.running_var.as_slice()?,
            "ctr.fc2.w" => self.ctr.as_ref()?.fc2.w.as_slice()?,
            "ctr.fc2.b" => self.ctr.as_ref()?.fc2.b.as_slice()?,
            "ctr.bn2.gamma" => self.ctr.as_ref()?.bn2.gamma.as_slice()?,
            "ctr.bn2.beta" => self.ctr.as_ref()?.bn2.beta.as_slice()?,
            "ctr.bn2.running_mean" => self.ctr.as_ref()?.bn2.running_mean.as_slice()?,
            "ctr.bn2.running_var" => self.ctr.as_ref()?.bn2.running_var.as_slice()?,
            "fm.w" => self.fm_w.as_slice()?,
            "fm.v" => self.fm_v.as_slice()?,
            "head.fc1.w" => self.head.fc1.w.as_slice()?,
            "head.fc1.b" => self.head.fc1.b.as_slice()?,
            "head.bn1.gamma" => self.head.bn1.gamma.as_slice()?,
            "head.bn1.beta" => self.head.bn1.beta.as_slice()?,
            "head.bn1.running_mean" => self.head.bn1.running_mean.as_slice()?,
            "head.bn1.running_var" => self.head.bn1.running_var.as_slice()?,
            "head.fc2.w" => self.head.fc2.w.as_slice()?,
            "head.fc2.b" => self.head.fc2.b.as_slice()?,
            "head.bn2.gamma" => self.head.bn2.gamma.as_slice()?,
            "head.bn2.beta" => self.head.bn2.beta.as_slice()?,
            "head.bn2.running_mean" => self.head.bn2.running_mean.as_slice()?,
            "head.bn2.running_var" => self.head.bn2.running_var.as_slice()?,
            "head.fc3.w" => self.head.fc3.w.as_slice()?,
            "head.fc3.b" => self.head.fc3.b.as_slice()?,
            _ => return None,
        })
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        Some(match name {
            "emb.q_uni" => &mut self.text.as_mut()?.q_uni.data,
            "emb.q_bi" => &mut self.text.as_mut()?.q_bi.data,
            "emb.d_title_uni" => &mut self.text.as_mut()?.d_title_uni.data,
            "emb.d_title_bi" => &mut self.text.as_mut()?.d_title_bi.data,
            "emb.d_body_uni" => &mut self.text.as_mut()?.d_body_uni.data,
            "emb.d_body_bi" => &mut self.text.as_mut()?.d_body_bi.data,
            "emb.region" => &mut self.sparse.as_mut()?.region.data,
            "emb.city" => &mut self.sparse.as_mut()?.city.data,
            "ctr.fc1.w" => self.ctr.as_mut()?.fc1.w.as_slice_mut()?,
            "ctr.fc1.b" => self.ctr.as_mut()?.fc1.b.as_slice_mut()?,
            "ctr.bn1.gamma" => self.ctr.as_mut()?.bn1.gamma.as_slice_mut()?,
            "ctr.bn1.beta" => self.ctr.as_mut()?.bn1.beta.as_slice_mut()?,
            "ctr.bn1.running_mean" => self.ctr.as_mut()?.bn1.running_mean.as_slice_mut()?,
            "ctr.bn1.running_var" => self.ctr.as_mut()?.bn1.running_var.as_slice_mut()?,
            "ctr.fc2.w" => self.ctr.as_mut()?.fc2.w.as_slice_mut()?,
            "ctr.fc2.b" => self.ctr.as_mut()?.fc2.b.as_slice_mut()?,
            "ctr.bn2.gamma" => self.ctr.as_mut()?.bn2.gamma.as_slice_mut()?,
            "ctr.bn2.beta" => self.ctr.as_mut()?.bn2.beta.as_slice_mut()?,
            "ctr.bn2.running_mean" => self.ctr.as_mut()?.bn2.running_mean.as_slice_mut()?,
            "ctr.bn2.running_var" => self.ctr.as_mut()?.bn2.running_var.as_slice_mut()?,
            "fm.w" => self.fm_w.as_slice_mut()?,
            "fm.v" => self.fm_v.as_slice_mut()?,
            "head.fc1.w" => self.head.fc1.w.as_slice_mut()?,
            "head.fc1.b" => self.head.fc1.b.as_slice_mut()?,
            "head.bn1.gamma" => self.head.bn1.gamma.as_slice_mut()?,
            "head.bn1.beta" => self.head.bn1.beta.as_slice_mut()?,
            "head.bn1.running_mean" => self.head.bn1.running_mean.as_slice_mut()?,
            "head.bn1.running_var" => self.head.bn1.running_var.as_slice_mut()?,
            "head.fc2.w" => self.head.fc2.w.as_slice_mut()?,
            "head.fc2.b" => self.head.fc2.b.as_slice_mut()?,
            "head.bn2.gamma" => self.head.bn2.gamma.as_slice_mut()?,
            "head.bn2.beta" => self.head.bn2.beta.as_slice_mut()?,
            "head.bn2.running_mean" => self.head.bn2.running_mean.as_slice_mut()?,
            "head.bn2.running_var" => self.head.bn2.running_var.as_slice_mut()?,
            "head.fc3.w" => self.head.fc3.w.as_slice_mut()?,
            "head.fc3.b" => self.head.fc3.b.as_slice_mut()?,
            _ => return None,
        })
    }

    pub fn block_shape(&self, name: &str) -> Option<Vec<usize>> {
        let emb = |e: &Embedding| vec![e.rows, e.dim];
        let mat = |m: &Array2<f64>| vec![m.nrows(), m.ncols()];
        let vec1 = |v: &Array1<f64>| vec![v.len()];
        Some(match name {
            "emb.q_uni" => emb(&self.text.as_ref()?.q_uni),
            "emb.q_bi" => emb(&self.text.as_ref()?.q_bi),
            "emb.d_title_uni" => emb(&self.text.as_ref()?.d_title_uni),
            "emb.d_title_bi" => emb(&self.text.as_ref()?.d_title_bi),
            "emb.d_body_uni" => emb(&self.text.as_ref()?.d_body_uni),
            "emb.d_body_bi" => emb(&self.text.as_ref()?.d_body_bi),
            "emb.region" => emb(&self.sparse.as_ref()?.region),
            "emb.city" => emb(&self.sparse.as_ref()?.city),
            "ctr.fc1.w" => mat(&self.ctr.as_ref()?.fc1.w),
            "ctr.fc1.b" => vec1(&self.ctr.as_ref()?.fc1.b),
            "ctr.bn1.gamma" => vec1(&self.ctr.as_ref()?.bn1.gamma),
            "ctr.bn1.beta" => vec1(&self.ctr.as_ref()?.bn1.beta),
            "ctr.bn1.running_mean" => vec1(&self.ctr.as_ref()?.bn1.running_mean),
            "ctr.bn1.running_var" => vec1(&self.ctr.as_ref()?.bn1.running_var),
            "ctr.fc2.w" => mat(&self.ctr.as_ref()?.fc2.w),
            "ctr.fc2.b" => vec1(&self.ctr.as_ref()?.fc2.b),
            "ctr.bn2.gamma" => vec1(&self.ctr.as_ref()?.bn2.gamma),
            "ctr.bn2.beta" => vec1(&self.ctr.as_ref()?.bn2.beta),
            "ctr.bn2.running_mean" => vec1(&self.ctr.as_ref()?.bn2.running_mean),
            "ctr.bn2.running_var" => vec1(&self.ctr.as_ref()?.bn2.running_var),
            "fm.w" => vec1(&self.fm_w),
            "fm.v" => mat(&self.fm_v),
            "head.fc1.w" => mat(&self.head.fc1.w),
            "head.fc1.b" => vec1(&self.head.fc1.b),
            "head.bn1.gamma" => vec1(&self.head.bn1.gamma),
            "head.bn1.beta" => vec1(&self.head.bn1.beta),
            "head.bn1.running_mean" => vec1(&self.head.bn1.running_mean),
            "head.bn1.running_var" => vec1(&self.head.bn1.running_var),
            "head.fc2.w" => mat(&self.head.fc2.w),
            "head.fc2.b" => vec1(&self.head.fc2.b),
            "head.bn2.gamma" => vec1(&self.head.bn2.gamma),
            "head.bn2.beta" => vec1(&self.head.bn2.beta),
            "head.bn2.running_mean" => vec1(&self.head.bn2.running_mean),
            "head.bn2.running_var" => vec1(&self.head.bn2.running_var),
            "head.fc3.w" => mat(&self.head.fc3.w),
            "head.fc3.b" => vec1(&self.head.fc3.b),
            _ => return None,
        })
    }

    /// Click probabilities with running statistics and no dropout.
    /// Processes in bounded chunks so arbitrarily large inputs stay cheap.
    pub fn predict_batch(&self, records: &[ClickRecord]) -> Vec<f64> {
        let prepared = prepare_records(records);
        self.predict_prepared(&prepared)
    }

    pub fn predict_prepared(&self, prepared: &[PreparedRecord]) -> Vec<f64> {
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in prepared.chunks(4096) {
            let fwd = self.forward(chunk, BnMode::Fixed, None);
            out.extend(fwd.probs.iter().copied());
        }
        out
    }

    /// Mean binary cross entropy over the batch plus gradients for every
    /// trainable block. Pure: running statistics are not touched.
    pub fn loss_and_grads(
        &self,
        batch: &[PreparedRecord],
        mode: BnMode,
        masks: Option<&DropoutMasks>,
    ) -> (f64, Gradients) {
        let (loss, grads, _) = self.loss_grads_stats(batch, mode, masks);
        (loss, grads)
    }

    /// Training step: batch statistics, gradient computation, and the
    /// momentum update of the running statistics.
    pub fn train_step_grads(
        &mut self,
        batch: &[PreparedRecord],
        masks: Option<&DropoutMasks>,
    ) -> (f64, Gradients) {
        let (loss, grads, stats) = self.loss_grads_stats(batch, BnMode::Batch, masks);
        let b = batch.len() as f64;
        // Unbiased variance goes into the running buffers, as torch does.
        let unbias = if batch.len() > 1 { b / (b - 1.0) } else { 1.0 };
        for (name, mean, var) in stats {
            let bn = match name {
                "ctr.bn1" => &mut self.ctr.as_mut().unwrap().bn1,
                "ctr.bn2" => &mut self.ctr.as_mut().unwrap().bn2,
                "head.bn1" => &mut self.head.bn1,
                "head.bn2" => &mut self.head.bn2,
                _ => unreachable!(),
            };
            bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
            bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &var * (BN_MOMENTUM * unbias);
        }
        (loss, grads)
    }

    fn forward(&self, batch: &[PreparedRecord], mode: BnMode, masks: Option<&DropoutMasks>) -> Forward {
        let b = batch.len();
        assert!(b > 0, "empty batch");
        let setting = self.setting;

        let ctr = self.ctr.as_ref().map(|tower| {
            let d_in = setting.ctr_input_dim();
            let mut input = Array2::zeros((b, d_in));
            for (r, rec) in batch.iter().enumerate() {
                let mut c = 0;
                if setting.use_ctr_dense() {
                    for (i, v) in rec.dense.iter().enumerate() {
                        input[[r, c + i]] = *v;
                    }
                    c += DenseFeatures::DIM;
                }
                if setting.use_tr_dense() {
                    for (i, v) in rec.tr_dense.iter().enumerate() {
                        input[[r, c + i]] = *v;
                    }
                }
            }
            let z1 = tower.fc1.forward(&input);
            let (bn1_out, bn1) = bn_forward(&tower.bn1, &z1, mode);
            let h1 = bn1_out.mapv(|v| v.max(0.0));
            let h1d = match masks.and_then(|m| m.ctr.as_ref()) {
                Some(mask) => &h1 * mask,
                None => h1.clone(),
            };
            let z2 = tower.fc2.forward(&h1d);
            let (bn2_out, bn2) = bn_forward(&tower.bn2, &z2, mode);
            let out = bn2_out.mapv(|v| v.max(0.0));
            CtrCtx {
                input,
                bn1,
                h1,
                h1d,
                bn2,
                out,
            }
        });

        let ngram = self.text.as_ref().map(|tables| {
            let mut ctx = NgramCtx {
                q: [Array2::zeros((b, TEXT_DIM)), Array2::zeros((b, TEXT_DIM))],
                d: std::array::from_fn(|_| Array2::zeros((b, TEXT_DIM))),
                cos: Array2::zeros((b, NGRAM_COS_DIM)),
            };
            for (r, rec) in batch.iter().enumerate() {
                let q_embs = [
                    embed_bag(&tables.q_uni, &rec.q_uni),
                    embed_bag(&tables.q_bi, &rec.q_bi),
                ];
                let d_embs = [
                    embed_bag(&tables.d_title_uni, &rec.t_uni),
                    embed_bag(&tables.d_title_bi, &rec.t_bi),
                    embed_bag(&tables.d_body_uni, &rec.b_uni),
                    embed_bag(&tables.d_body_bi, &rec.b_bi),
                ];
                for (qi, e) in q_embs.iter().enumerate() {
                    for (j, v) in e.iter().enumerate() {
                        ctx.q[qi][[r, j]] = *v;
                    }
                }
                for (di, e) in d_embs.iter().enumerate() {
                    for (j, v) in e.iter().enumerate() {
                        ctx.d[di][[r, j]] = *v;
                    }
                }
                for qi in 0..2 {
                    for di in 0..4 {
                        ctx.cos[[r, qi * 4 + di]] = cosine(&q_embs[qi], &d_embs[di]);
                    }
                }
            }
            ctx
        });

        let x_dim = setting.x_dim();
        let mut x = Array2::zeros((b, x_dim));
        let mut col = 0;
        if let Some(ctr) = &ctr {
            x.slice_mut(ndarray::s![.., col..col + CTR_OUT]).assign(&ctr.out);
            col += CTR_OUT;
        }
        if let Some(tables) = &self.sparse {
            for (r, rec) in batch.iter().enumerate() {
                for (j, v) in tables.region.row(rec.region_bucket).iter().enumerate() {
                    x[[r, col + j]] = *v;
                }
                for (j, v) in tables.city.row(rec.city_bucket).iter().enumerate() {
                    x[[r, col + SPARSE_DIM + j]] = *v;
                }
            }
            col += 2 * SPARSE_DIM;
        }
        if let Some(ng) = &ngram {
            x.slice_mut(ndarray::s![.., col..col + NGRAM_COS_DIM]).assign(&ng.cos);
        }

        // Factorization machine: linear term plus half of squared sums.
        let lin = x.dot(&self.fm_w);
        let fm_t = x.dot(&self.fm_v);
        let mut s = Array1::zeros(b);
        for r in 0..b {
            let row = x.row(r);
            s[r] = fm_second_order(row.as_slice().expect("rows are contiguous"), &self.fm_v);
        }

        let mut head_in = Array2::zeros((b, x_dim + 2));
        head_in.slice_mut(ndarray::s![.., ..x_dim]).assign(&x);
        head_in.column_mut(x_dim).assign(&lin);
        head_in.column_mut(x_dim + 1).assign(&s);

        let z1 = self.head.fc1.forward(&head_in);
        let (bn1_out, bn1) = bn_forward(&self.head.bn1, &z1, mode);
        let h1 = bn1_out.mapv(|v| v.max(0.0));
        let h1d = match masks.and_then(|m| m.head.as_ref()) {
            Some(mask) => &h1 * mask,
            None => h1.clone(),
        };
        let z2 = self.head.fc2.forward(&h1d);
        let (bn2_out, bn2) = bn_forward(&self.head.bn2, &z2, mode);
        let h2 = bn2_out.mapv(|v| v.max(0.0));
        let probs = self.head.fc3.forward(&h2).column(0).mapv(sigmoid);

        Forward {
            ctr,
            ngram,
            x,
            fm_t,
            head: HeadCtx {
                input: head_in,
                bn1,
                h1,
                h1d,
                bn2,
                h2,
            },
            probs,
        }
    }

    #[allow(clippy::type_complexity)]
    fn loss_grads_stats(
        &self,
        batch: &[PreparedRecord],
        mode: BnMode,
        masks: Option<&DropoutMasks>,
    ) -> (f64, Gradients, Vec<(&'static str, Array1<f64>, Array1<f64>)>) {
        let b = batch.len();
        let fwd = self.forward(batch, mode, masks);
        let bf = b as f64;

        let mut loss = 0.0;
        let mut dlogits = Array1::zeros(b);
        for (i, rec) in batch.iter().enumerate() {
            let p = fwd.probs[i];
            let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            loss -= rec.label * pc.ln() + (1.0 - rec.label) * (1.0 - pc).ln();
            // Where the clamp is active the loss is locally flat in z.
            dlogits[i] = if p == pc { (p - rec.label) / bf } else { 0.0 };
        }
        loss /= bf;

        let mut grads = Gradients::default();
        let mut stats = Vec::new();
        let x_dim = self.setting.x_dim();

        // Head backward.
        let dz = dlogits.clone().insert_axis(Axis(1)); // b x 1
        let dw3 = fwd.head.h2.t().dot(&dz);
        let db3 = dz.sum_axis(Axis(0));
        let dh2 = dz.dot(&self.head.fc3.w.t());
        let relu2 = fwd.head.h2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dbn2 = &dh2 * &relu2;
        let (dz2, dg2, dbeta2) = bn_backward(&self.head.bn2, &fwd.head.bn2, &dbn2, mode);
        let dw2 = fwd.head.h1d.t().dot(&dz2);
        let db2 = dz2.sum_axis(Axis(0));
        let mut dh1 = dz2.dot(&self.head.fc2.w.t());
        if let Some(mask) = masks.and_then(|m| m.head.as_ref()) {
            dh1 *= mask;
        }
        let relu1 = fwd.head.h1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dbn1 = &dh1 * &relu1;
        let (dz1, dg1, dbeta1) = bn_backward(&self.head.bn1, &fwd.head.bn1, &dbn1, mode);
        let dw1 = fwd.head.input.t().dot(&dz1);
        let db1 = dz1.sum_axis(Axis(0));
        let dhead_in = dz1.dot(&self.head.fc1.w.t());

        grads.insert_dense("head.fc3.w", &dw3);
        grads.insert_dense1("head.fc3.b", &db3);
        grads.insert_dense1("head.bn2.gamma", &dg2);
        grads.insert_dense1("head.bn2.beta", &dbeta2);
        grads.insert_dense("head.fc2.w", &dw2);
        grads.insert_dense1("head.fc2.b", &db2);
        grads.insert_dense1("head.bn1.gamma", &dg1);
        grads.insert_dense1("head.bn1.beta", &dbeta1);
        grads.insert_dense("head.fc1.w", &dw1);
        grads.insert_dense1("head.fc1.b", &db1);
        if mode == BnMode::Batch {
            stats.push((
                "head.bn1",
                fwd.head.bn1.batch_mean.clone(),
                fwd.head.bn1.batch_var.clone(),
            ));
            stats.push((
                "head.bn2",
                fwd.head.bn2.batch_mean.clone(),
                fwd.head.bn2.batch_var.clone(),
            ));
        }

        // Split the head input gradient into x, linear term, and
        // interaction term, then fold the factorization machine back
        // into x.
        let dx_direct = dhead_in.slice(ndarray::s![.., ..x_dim]).to_owned();
        let dlin = dhead_in.column(x_dim).to_owned();
        let ds = dhead_in.column(x_dim + 1).to_owned();

        let dfm_w = fwd.x.t().dot(&dlin);
        let x2 = fwd.x.mapv(|v| v * v);
        let ds_col = ds.clone().insert_axis(Axis(1));
        let dfm_v = fwd.x.t().dot(&(&fwd.fm_t * &ds_col))
            - &self.fm_v * &x2.t().dot(&ds).insert_axis(Axis(1));
        let sumv2 = (&self.fm_v * &self.fm_v).sum_axis(Axis(1));
        let dx_s = (fwd.fm_t.dot(&self.fm_v.t()) - &fwd.x * &sumv2) * &ds_col;
        let fm_w_row = self.fm_w.clone().insert_axis(Axis(0));
        let dx_lin = dlin.clone().insert_axis(Axis(1)).dot(&fm_w_row);
        let dx = dx_direct + dx_lin + dx_s;

        grads.insert_dense1("fm.w", &dfm_w);
        grads.insert_dense("fm.v", &dfm_v);

        // Split x back into its sections.
        let mut col = 0;
        if let Some(ctx) = &fwd.ctr {
            let tower = self.ctr.as_ref().unwrap();
            let dout = dx.slice(ndarray::s![.., col..col + CTR_OUT]).to_owned();
            col += CTR_OUT;
            let relu2 = ctx.out.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let dbn2 = &dout * &relu2;
            let (dz2, dg2, dbeta2) = bn_backward(&tower.bn2, &ctx.bn2, &dbn2, mode);
            let dw2 = ctx.h1d.t().dot(&dz2);
            let db2 = dz2.sum_axis(Axis(0));
            let mut dh1 = dz2.dot(&tower.fc2.w.t());
            if let Some(mask) = masks.and_then(|m| m.ctr.as_ref()) {
                dh1 *= mask;
            }
            let relu1 = ctx.h1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let dbn1 = &dh1 * &relu1;
            let (dz1, dg1, dbeta1) = bn_backward(&tower.bn1, &ctx.bn1, &dbn1, mode);
            let dw1 = ctx.input.t().dot(&dz1);
            let db1 = dz1.sum_axis(Axis(0));
            grads.insert_dense("ctr.fc1.w", &dw1);
            grads.insert_dense1("ctr.fc1.b", &db1);
            grads.insert_dense1("ctr.bn1.gamma", &dg1);
            grads.insert_dense1("ctr.bn1.beta", &dbeta1);
            grads.insert_dense("ctr.fc2.w", &dw2);
            grads.insert_dense1("ctr.fc2.b", &db2);
            grads.insert_dense1("ctr.bn2.gamma", &dg2);
            grads.insert_dense1("ctr.bn2.beta", &dbeta2);
            if mode == BnMode::Batch {
                stats.push(("ctr.bn1", ctx.bn1.batch_mean.clone(), ctx.bn1.batch_var.clone()));
                stats.push(("ctr.bn2", ctx.bn2.batch_mean.clone(), ctx.bn2.batch_var.clone()));
            }
        }
        if self.sparse.is_some() {
            let mut region_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut city_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (r, rec) in batch.iter().enumerate() {
                let row = region_rows
                    .entry(rec.region_bucket)
                    .or_insert_with(|| vec![0.0; SPARSE_DIM]);
                for j in 0..SPARSE_DIM {
                    row[j] += dx[[r, col + j]];
                }
                let row = city_rows
                    .entry(rec.city_bucket)
                    .or_insert_with(|| vec![0.0; SPARSE_DIM]);
                for j in 0..SPARSE_DIM {
                    row[j] += dx[[r, col + SPARSE_DIM + j]];
                }
            }
            grads.blocks.insert(
                "emb.region",
                GradBlock::Rows {
                    dim: SPARSE_DIM,
                    rows: region_rows,
                },
            );
            grads.blocks.insert(
                "emb.city",
                GradBlock::Rows {
                    dim: SPARSE_DIM,
                    rows: city_rows,
                },
            );
            col += 2 * SPARSE_DIM;
        }
        if let Some(ctx) = &fwd.ngram {
            let mut table_rows: [BTreeMap<usize, Vec<f64>>; 6] = Default::default();
            for (r, rec) in batch.iter().enumerate() {
                let mut dq = [[0.0; TEXT_DIM]; 2];
                let mut dd = [[0.0; TEXT_DIM]; 4];
                for qi in 0..2 {
                    for di in 0..4 {
                        let dcos = dx[[r, col + qi * 4 + di]];
                        if dcos == 0.0 {
                            continue;
                        }
                        let a = ctx.q[qi].row(r);
                        let bvec = ctx.d[di].row(r);
                        let na = a.dot(&a).sqrt();
                        let nb = bvec.dot(&bvec).sqrt();
                        if na == 0.0 || nb == 0.0 {
                            continue;
                        }
                        let c = ctx.cos[[r, qi * 4 + di]];
                        for j in 0..TEXT_DIM {
                            dq[qi][j] += dcos * (bvec[j] / (na * nb) - c * a[j] / (na * na));
                            dd[di][j] += dcos * (a[j] / (na * nb) - c * bvec[j] / (nb * nb));
                        }
                    }
                }
                let bags = [
                    &rec.q_uni,
                    &rec.q_bi,
                    &rec.t_uni,
                    &rec.t_bi,
                    &rec.b_uni,
                    &rec.b_bi,
                ];
                for (ti, bag) in bags.iter().enumerate() {
                    let src: &[f64; TEXT_DIM] = if ti < 2 { &dq[ti] } else { &dd[ti - 2] };
                    if src.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for &(bucket, weight) in &bag.0 {
                        let row = table_rows[ti]
                            .entry(bucket as usize)
                            .or_insert_with(|| vec![0.0; TEXT_DIM]);
                        for j in 0..TEXT_DIM {
                            row[j] += weight * src[j];
                        }
                    }
                }
            }
            let names = [
                "emb.q_uni",
                "emb.q_bi",
                "emb.d_title_uni",
                "emb.d_title_bi",
                "emb.d_body_uni",
                "emb.d_body_bi",
            ];
            for (name, rows) in names.into_iter().zip(table_rows) {
                grads
                    .blocks
                    .insert(name, GradBlock::Rows { dim: TEXT_DIM, rows });
            }
        }

        (loss, grads, stats)
    }
}

impl Gradients {
    fn insert_dense(&mut self, name: &'static str, g: &Array2<f64>) {
        self.blocks
            .insert(name, GradBlock::Dense(g.iter().copied().collect()));
    }

    fn insert_dense1(&mut self, name: &'static str, g: &Array1<f64>) {
        self.blocks
            .insert(name, GradBlock::Dense(g.to_vec()));
    }
}

struct CtrCtx {
    input: Array2<f64>,
    bn1: BnCtx,
    h1: Array2<f64>,
    h1d: Array2<f64>,
    bn2: BnCtx,
    out: Array2<f64>,
}

struct NgramCtx {
    q: [Array2<f64>; 2],
    d: [Array2<f64>; 4],
    cos: Array2<f64>,
}

struct HeadCtx {
    input: Array2<f64>,
    bn1: BnCtx,
    h1: Array2<f64>,
    h1d: Array2<f64>,
    bn2: BnCtx,
    h2: Array2<f64>,
}

struct Forward {
    ctr: Option<CtrCtx>,
    ngram: Option<NgramCtx>,
    x: Array2<f64>,
    fm_t: Array2<f64>,
    head: HeadCtx,
    probs: Array1<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Second-order factorization machine term Σ_{i<j} (v_i·v_j) x_i x_j,
/// computed by the half-of-squared-sums rearrangement so it stays linear in
/// the input dimension. `v` holds one factor row per input dimension.
pub fn fm_second_order(x: &[f64], v: &Array2<f64>) -> f64 {
    assert_eq!(x.len(), v.nrows(), "one factor row per input dimension");
    let mut total = 0.0;
    for f in 0..v.ncols() {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let t = v[[i, f]] * xi;
            sum += t;
            sq += t * t;
        }
        total += sum * sum - sq;
    }
    0.5 * total
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Draws inverted dropout masks for one batch from `rng`. Mask layout and
/// draw order are fixed so a seeded run is reproducible.
pub fn draw_dropout_masks<R: Rng>(rng: &mut R, model: &TwoTowerModel, batch: usize) -> DropoutMasks {
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < DROPOUT_P {
                0.0
            } else {
                1.0 / (1.0 - DROPOUT_P)
            }
        })
    };
    let ctr = model.setting.has_ctr_tower().then(|| draw(batch, CTR_HIDDEN));
    let head = Some(draw(batch, HEAD_HIDDEN1));
    DropoutMasks { ctr, head }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::features::SparseFeatures;

    fn record(query: &str, title: &str, body: &str, label: u8, salt: u64) -> ClickRecord {
        let mix = |k: u64| ((salt.wrapping_mul(2654435761).wrapping_add(k) % 97) as f64) / 97.0;
        ClickRecord {
            session_id: salt,
            query: query.to_string(),
            doc_id: NodeId(1000 + salt),
            doc_title: title.to_string(),
            doc_body: body.to_string(),
            dense: DenseFeatures([
                mix(1), mix(2), mix(3), mix(4), mix(5), mix(6),
                mix(7), mix(8), mix(9), mix(10), mix(11), mix(12),
            ]),
            sparse: SparseFeatures {
                region_id: Some((salt % 7) as u32),
                city_id: if salt % 3 == 0 { None } else { Some((salt % 50) as u32) },
            },
            tr_dense: TRDenseFeatures {
                bm25: mix(13) * 4.0,
                avg_tfidf: mix(14),
                last_match_pos: mix(15),
            },
            label,
        }
    }

    fn sample_batch(n: usize) -> Vec<ClickRecord> {
        (0..n as u64)
            .map(|i| {
                record(
                    if i % 2 == 0 { "blue cat videos" } else { "cheap flights" },
                    if i % 3 == 0 { "blue cat" } else { "holiday deals" },
                    "a longer body about cats and travel plans",
                    (i % 2) as u8,
                    i,
                )
            })
            .collect()
    }

    #[test]
    fn dims_per_setting() {
        use AblationSetting::*;
        let cases = [
            (CtrOnly, 12, 192),
            (TrOnly, 3, 128),
            (CtrTr, 15, 192),
            (NgramOnly, 0, 8),
            (CtrNgram, 12, 200),
            (CtrTrNgram, 15, 200),
        ];
        for (s, d_in, x) in cases {
            assert_eq!(s.ctr_input_dim(), d_in, "{}", s.as_str());
            assert_eq!(s.x_dim(), x, "{}", s.as_str());
            assert_eq!(s.has_ctr_tower(), d_in > 0);
        }
    }

    #[test]
    fn setting_names_round_trip() {
        for s in AblationSetting::ALL {
            assert_eq!(AblationSetting::from_name(s.as_str()), Some(s));
            assert_eq!(AblationSetting::from_tag(s.tag()), Some(s));
        }
        assert_eq!(AblationSetting::from_name("bogus"), None);
        assert_eq!(AblationSetting::from_tag(6), None);
    }

    #[test]
    fn zeroed_final_layer_gives_half_probability() {
        let mut model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 7);
        model.block_mut("head.fc3.w").unwrap().fill(0.0);
        model.block_mut("head.fc3.b").unwrap().fill(0.0);
        let p = model.predict_batch(&sample_batch(3));
        assert!(p.iter().all(|&v| v == 0.5), "{p:?}");
    }

    #[test]
    fn fm_interaction_matches_pairwise_sum() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let d = 1 + rng.random_range(0..20);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..FM_FACTOR_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut brute = 0.0;
            for i in 0..d {
                for j in i + 1..d {
                    let dot: f64 = (0..FM_FACTOR_DIM).map(|f| v[i][f] * v[j][f]).sum();
                    brute += dot * x[i] * x[j];
                }
            }
            let mut fast = 0.0;
            for f in 0..FM_FACTOR_DIM {
                let sum: f64 = (0..d).map(|i| v[i][f] * x[i]).sum();
                let sq: f64 = (0..d).map(|i| v[i][f] * v[i][f] * x[i] * x[i]).sum();
                fast += sum * sum - sq;
            }
            fast *= 0.5;
            assert!((brute - fast).abs() < 1e-10, "{brute} vs {fast}");
        }
    }

    /// The model's own interaction output should equal the brute force
    /// pairwise form as well.
    #[test]
    fn model_fm_term_matches_brute_force() {
        let model = TwoTowerModel::new(AblationSetting::NgramOnly, 3);
        let batch = prepare_records(&sample_batch(4));
        let fwd = model.forward(&batch, BnMode::Fixed, None);
        let x_dim = model.x_dim();
        for r in 0..batch.len() {
            let x: Vec<f64> = (0..x_dim).map(|i| fwd.x[[r, i]]).collect();
            let mut brute = 0.0;
            for i in 0..x_dim {
                for j in i + 1..x_dim {
                    let dot: f64 = (0..FM_FACTOR_DIM)
                        .map(|f| model.fm_v[[i, f]] * model.fm_v[[j, f]])
                        .sum();
                    brute += dot * x[i] * x[j];
                }
            }
            let s = fwd.head.input[[r, x_dim + 1]];
            assert!((s - brute).abs() < 1e-10, "row {r}: {s} vs {brute}");
        }
    }

    fn fd_check(model: &mut TwoTowerModel, batch: &[PreparedRecord], mode: BnMode, masks: Option<&DropoutMasks>) {
        let eps = 1e-5;
        let (_, grads) = model.loss_and_grads(batch, mode, masks);
        let names = model.param_names();
        for name in names {
            let len = model.block(name).unwrap().len();
            let indices: Vec<usize> = if len <= 8 {
                (0..len).collect()
            } else {
                match &grads.blocks[name] {
                    GradBlock::Dense(_) => {
                        vec![0, 1, len / 3, len / 2, 2 * len / 3, len - 2, len - 1]
                    }
                    GradBlock::Rows { dim, rows } => rows
                        .keys()
                        .take(3)
                        .flat_map(|r| [r * dim, r * dim + dim / 2, r * dim + dim - 1])
                        .collect(),
                }
            };
            for idx in indices {
                let orig = model.block(name).unwrap()[idx];
                model.block_mut(name).unwrap()[idx] = orig + eps;
                let (lp, _) = model.loss_and_grads(batch, mode, masks);
                model.block_mut(name).unwrap()[idx] = orig - eps;
                let (lm, _) = model.loss_and_grads(batch, mode, masks);
                model.block_mut(name).unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads.get(name, idx);
                let denom = fd.abs().max(an.abs()).max(1.0);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{name}[{idx}] {mode:?}: fd {fd} analytic {an}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_fixed_mode() {
        for setting in [AblationSetting::CtrTrNgram, AblationSetting::TrOnly] {
            let mut model = TwoTowerModel::new(setting, 11);
            let batch = prepare_records(&sample_batch(6));
            fd_check(&mut model, &batch, BnMode::Fixed, None);
        }
    }

    #[test]
    fn gradients_match_finite_differences_batch_mode() {
        for setting in [AblationSetting::CtrTrNgram, AblationSetting::NgramOnly] {
            let mut model = TwoTowerModel::new(setting, 13);
            let batch = prepare_records(&sample_batch(6));
            fd_check(&mut model, &batch, BnMode::Batch, None);
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout_mask() {
        let mut model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 17);
        let batch = prepare_records(&sample_batch(5));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let masks = draw_dropout_masks(&mut rng, &model, batch.len());
        fd_check(&mut model, &batch, BnMode::Fixed, Some(&masks));
    }

    #[test]
    fn loss_is_permutation_invariant_up_to_rounding() {
        let model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 5);
        let batch = prepare_records(&sample_batch(8));
        let (l1, _) = model.loss_and_grads(&batch, BnMode::Batch, None);
        let mut rev: Vec<PreparedRecord> = batch.to_vec();
        rev.reverse();
        let (l2, _) = model.loss_and_grads(&rev, BnMode::Batch, None);
        assert!((l1 - l2).abs() < 1e-9, "{l1} vs {l2}");
    }

    #[test]
    fn predict_does_not_mutate_and_all_ones_mask_is_identity() {
        let model = TwoTowerModel::new(AblationSetting::CtrTr, 23);
        let records = sample_batch(4);
        let before: Vec<f64> = model.block("head.bn1.running_mean").unwrap().to_vec();
        let p1 = model.predict_batch(&records);
        let p2 = model.predict_batch(&records);
        assert_eq!(p1, p2);
        assert_eq!(before, model.block("head.bn1.running_mean").unwrap());

        let batch = prepare_records(&records);
        let masks = DropoutMasks {
            ctr: Some(Array2::ones((4, CTR_HIDDEN))),
            head: Some(Array2::ones((4, HEAD_HIDDEN1))),
        };
        let (lm, _) = model.loss_and_grads(&batch, BnMode::Fixed, Some(&masks));
        let (ln, _) = model.loss_and_grads(&batch, BnMode::Fixed, None);
        assert_eq!(lm, ln);
    }

    #[test]
    fn train_step_updates_running_stats_with_momentum() {
        let mut model = TwoTowerModel::new(AblationSetting::CtrTrNgram, 31);
        let batch = prepare_records(&sample_batch(8));
        // Batch statistics the update will fold in, measured beforehand.
        let fwd = model.forward(&batch, BnMode::Batch, None);
        let batch_mean = fwd.head.bn1.batch_mean.clone();
        let batch_var = fwd.head.bn1.batch_var.clone();
        drop(fwd);
        model.train_step_grads(&batch, None);
        let mean = model.block("head.bn1.running_mean").unwrap();
        let var = model.block("head.bn1.running_var").unwrap();
        let unbias = 8.0 / 7.0;
        for i in 0..HEAD_HIDDEN1 {
            assert!((mean[i] - 0.1 * batch_mean[i]).abs() < 1e-12);
            assert!((var[i] - (0.9 + 0.1 * unbias * batch_var[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn prepared_records_share_bags() {
        let records = sample_batch(4);
        let mut records = records;
        records[2].query = records[0].query.clone();
        let prepared = prepare_records(&records);
        assert!(Rc::ptr_eq(&prepared[0].q_uni, &prepared[2].q_uni));
        assert!(!Rc::ptr_eq(&prepared[0].q_uni, &prepared[1].q_uni));
    }

    #[test]
    fn missing_sparse_id_goes_to_bucket_zero() {
        let mut r = record("q", "t", "b", 0, 3);
        r.sparse = SparseFeatures::default();
        let p = prepare_records(&[r]);
        assert_eq!(p[0].region_bucket, 0);
        assert_eq!(p[0].city_bucket, 0);
    }

    #[test]
    #[should_panic(expected = "empty batch")]
    fn empty_batch_panics() {
        let model = TwoTowerModel::new(AblationSetting::TrOnly, 1);
        model.loss_and_grads(&[], BnMode::Fixed, None);
    }
}
