//! Temporal neighborhood encoder and residual similarity scorer.

mod encoder;
mod similarity;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Real, Tensor, TensorError};

pub use encoder::{
    encode, encode_batch, encode_with_attention, multi_head, positional_encoding, scaled_dot_attention,
    snapshot_aggregate, EncodedBatch,
};
pub use similarity::{pair_rep, pair_rep_batch, score, transform, transform_var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("history has {got} snapshots, encoder expects {expected}")]
    HistoryLengthMismatch { expected: usize, got: usize },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Snapshot sequence through positional encoding and self-attention.
    #[default]
    Attention,
    /// All neighbors of the window pooled into one snapshot (ablation M1).
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EncoderConfig {
    pub d: usize,
    pub ell: usize,
    pub n_max: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_inner: usize,
    /// Width of `h_e`; `None` means `d`.
    pub d_out: Option<usize>,
    pub mode: EncoderMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 50,
            ell: 20,
            n_max: 50,
            n_heads: 4,
            n_layers: 1,
            d_inner: 256,
            d_out: None,
            mode: EncoderMode::Attention,
        }
    }
}

impl EncoderConfig {
    pub fn d_model(&self) -> usize {
        2 * self.d
    }

    pub fn d_out(&self) -> usize {
        self.d_out.unwrap_or(self.d)
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }

    /// Length of a pair representation `[h_s : v_s : h_o : v_o]`.
    pub fn pair_dim(&self) -> usize {
        2 * (self.d_out() + self.d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d == 0 || self.ell == 0 || self.n_max == 0 || self.d_out() == 0 {
            return fail("d, ell, nMax and dOut must be positive");
        }
        if self.mode == EncoderMode::Attention {
            if self.n_heads == 0 || self.d_model() % self.n_heads != 0 {
                return Err(ModelError::Config(format!(
                    "d_model = {} is not divisible by nHeads = {}",
                    self.d_model(),
                    self.n_heads
                )));
            }
            if self.n_layers == 0 {
                return fail("attention mode needs nLayers >= 1");
            }
            if self.d_inner == 0 {
                return fail("dInner must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamIds {
    pub entity: ParamId,
    pub relation: ParamId,
    pub snap_w: ParamId,
    pub snap_b: ParamId,
    pub layers: Vec<LayerIds>,
    pub wstar: Option<ParamId>,
    pub wflat: Option<ParamId>,
    pub sim_w1: ParamId,
    pub sim_b1: ParamId,
    pub sim_w2: ParamId,
    pub sim_b2: ParamId,
}

/// Kind of initial value for one parameter.
#[derive(Clone, Copy)]
enum Init {
    /// Uniform on `±1/√fan_in`, fan-in = leading dimension.
    Uniform(usize),
    Zeros,
    Ones,
}

/// Parameter names with shapes, in initialization order.
fn layout(cfg: &EncoderConfig, num_entities: usize, num_relations: usize) -> Vec<(String, Vec<usize>, Init)> {
    let (d, dm, dk) = (cfg.d, cfg.d_model(), cfg.d_head());
    let mut out = vec![
        ("entity".to_string(), vec![num_entities, d], Init::Uniform(d)),
        ("relation".to_string(), vec![2 * num_relations, d], Init::Uniform(d)),
        ("snapshot.w".to_string(), vec![dm, d], Init::Uniform(dm)),
        ("snapshot.b".to_string(), vec![d], Init::Zeros),
    ];
    match cfg.mode {
        EncoderMode::Attention => {
            for l in 0..cfg.n_layers {
                for h in 0..cfg.n_heads {
                    for m in ["wq", "wk", "wv"] {
                        out.push((format!("layer{l}.head{h}.{m}"), vec![dm, dk], Init::Uniform(dm)));
                    }
                }
                let p = |s: &str| format!("layer{l}.{s}");
                out.push((p("wo"), vec![cfg.n_heads * dk, dm], Init::Uniform(cfg.n_heads * dk)));
                out.push((p("norm1.gain"), vec![dm], Init::Ones));
                out.push((p("norm1.bias"), vec![dm], Init::Zeros));
                out.push((p("ffn.w1"), vec![dm, cfg.d_inner], Init::Uniform(dm)));
                out.push((p("ffn.b1"), vec![cfg.d_inner], Init::Zeros));
                out.push((p("ffn.w2"), vec![cfg.d_inner, dm], Init::Uniform(cfg.d_inner)));
                out.push((p("ffn.b2"), vec![dm], Init::Zeros));
                out.push((p("norm2.gain"), vec![dm], Init::Ones));
                out.push((p("norm2.bias"), vec![dm], Init::Zeros));
            }
            out.push(("project.wstar".to_string(), vec![dm * cfg.ell, cfg.d_out()], Init::Uniform(dm * cfg.ell)));
        }
        EncoderMode::Flat => {
            out.push(("project.wflat".to_string(), vec![dm, cfg.d_out()], Init::Uniform(dm)));
        }
    }
    let p = cfg.pair_dim();
    out.push(("sim.w1".to_string(), vec![p, p], Init::Uniform(p)));
    out.push(("sim.b1".to_string(), vec![p], Init::Zeros));
    out.push(("sim.w2".to_string(), vec![p, p], Init::Uniform(p)));
    out.push(("sim.b2".to_string(), vec![p], Init::Zeros));
    out
}

/// Every learnable tensor of the encoder and scorer, plus the config that
/// fixes their shapes.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real = f32> {
    pub cfg: EncoderConfig,
    pub store: ParamStore<T>,
    pub ids: ParamIds,
    num_entities: usize,
    num_relations: usize,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization. `num_relations` counts base relations; the
    /// relation table also holds their inverses.
    pub fn init(cfg: EncoderConfig, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(&cfg, num_entities, num_relations) {
            let t = match init {
                Init::Uniform(fan_in) => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| T::from_f64(rng.gen_range(-a..a)))
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::filled(&shape, T::one()),
            };
            store.insert(name, t);
        }
        Self::from_store(store, cfg, num_entities, num_relations)
    }

    /// Binds an existing store, checking that every expected tensor is
    /// present with the right shape.
    pub fn from_store(
        store: ParamStore<T>,
        cfg: EncoderConfig,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        for (name, shape, _) in layout(&cfg, num_entities, num_relations) {
            let t = store.by_name(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name,
                    expected: shape,
                    got: t.shape().to_vec(),
                });
            }
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let layers = match cfg.mode {
            EncoderMode::Attention => (0..cfg.n_layers)
                .map(|l| {
                    let heads = |m: &str| (0..cfg.n_heads).map(|h| id(&format!("layer{l}.head{h}.{m}"))).collect();
                    let p = |s: &str| id(&format!("layer{l}.{s}"));
                    LayerIds {
                        wq: heads("wq"),
                        wk: heads("wk"),
                        wv: heads("wv"),
                        wo: p("wo"),
                        norm1_gain: p("norm1.gain"),
                        norm1_bias: p("norm1.bias"),
                        w1: p("ffn.w1"),
                        b1: p("ffn.b1"),
                        w2: p("ffn.w2"),
                        b2: p("ffn.b2"),
                        norm2_gain: p("norm2.gain"),
                        norm2_bias: p("norm2.bias"),
                    }
                })
                .collect(),
            EncoderMode::Flat => Vec::new(),
        };
        let ids = ParamIds {
            entity: id("entity"),
            relation: id("relation"),
            snap_w: id("snapshot.w"),
            snap_b: id("snapshot.b"),
            layers,
            wstar: store.id("project.wstar").filter(|_| cfg.mode == EncoderMode::Attention),
            wflat: store.id("project.wflat").filter(|_| cfg.mode == EncoderMode::Flat),
            sim_w1: id("sim.w1"),
            sim_b1: id("sim.b1"),
            sim_w2: id("sim.w2"),
            sim_b2: id("sim.b2"),
        };
        Ok(ModelParams {
            cfg,
            store,
            ids,
            num_entities,
            num_relations,
        })
    }

    /// Recovers the encoder config from tensor names and shapes, as stored in
    /// a checkpoint. `n_max` is not a parameter and must be supplied, as must
    /// `ell` for flat mode (attention mode reads it off `Wstar`).
    pub fn infer_config(store: &ParamStore<T>, ell: usize, n_max: usize) -> Result<EncoderConfig, ModelError> {
        let shape = |n: &str| {
            store
                .by_name(n)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| ModelError::MissingParam(n.to_string()))
        };
        let d = shape("entity")?[1];
        let mut cfg = EncoderConfig {
            d,
            n_max,
            ..Default::default()
        };
        if let Ok(ws) = shape("project.wstar") {
            cfg.mode = EncoderMode::Attention;
            cfg.ell = ws[0] / (2 * d);
            cfg.d_out = Some(ws[1]).filter(|&o| o != d);
            cfg.n_layers = (0..).take_while(|l| store.id(&format!("layer{l}.wo")).is_some()).count();
            cfg.n_heads = (0..).take_while(|h| store.id(&format!("layer0.head{h}.wq")).is_some()).count();
            cfg.d_inner = shape("layer0.ffn.w1")?[1];
        } else {
            let wf = shape("project.wflat")?;
            cfg.mode = EncoderMode::Flat;
            cfg.ell = ell;
            cfg.d_out = Some(wf[1]).filter(|&o| o != d);
        }
        Ok(cfg)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            cfg: self.cfg,
            store: self.store.cast(),
            ids: self.ids.clone(),
            num_entities: self.num_entities,
            num_relations: self.num_relations,
        }
    }

    /// Copy with every tensor replaced by zeros.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for id in self.store.ids().collect::<Vec<_>>() {
            let shape = out.store.get(id).shape().to_vec();
            *out.store.get_mut(id) = Tensor::zeros(&shape);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            d: 4,
            ell: 3,
            n_max: 2,
            n_heads: 2,
            n_layers: 2,
            d_inner: 5,
            d_out: None,
            mode: EncoderMode::Attention,
        }
    }

    #[test]
    fn shapes_follow_config() {
        let m = ModelParams::<f32>::init(tiny(), 7, 3, 1).unwrap();
        let s = |n: &str| m.store.by_name(n).unwrap().shape().to_vec();
        assert_eq!(s("entity"), vec![7, 4]);
        assert_eq!(s("relation"), vec![6, 4]);
        assert_eq!(s("snapshot.w"), vec![8, 4]);
        assert_eq!(s("layer1.head1.wv"), vec![8, 4]);
        assert_eq!(s("layer0.wo"), vec![8, 8]);
        assert_eq!(s("layer0.ffn.w1"), vec![8, 5]);
        assert_eq!(s("project.wstar"), vec![24, 4]);
        assert_eq!(s("sim.w1"), vec![16, 16]);
        assert!(m.store.by_name("project.wflat").is_none());
        assert_eq!(m.ids.layers.len(), 2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::<f32>::init(tiny(), 7, 3, 9).unwrap();
        let b = ModelParams::<f32>::init(tiny(), 7, 3, 9).unwrap();
        let c = ModelParams::<f32>::init(tiny(), 7, 3, 10).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
        let w = a.store.by_name("snapshot.w").unwrap();
        let bound = 1.0 / 8f32.sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(a.store.by_name("layer0.norm1.gain").unwrap().data().iter().all(|&g| g == 1.0));
        assert!(a.store.by_name("sim.b1").unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        let mut c = tiny();
        c.n_layers = 0;
        assert!(c.validate().is_err());
        c.mode = EncoderMode::Flat;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_json_uses_camel_case_and_defaults() {
        let c: EncoderConfig = serde_json::from_str(r#"{"d": 16, "ell": 5, "nHeads": 2, "mode": "flat"}"#).unwrap();
        assert_eq!((c.d, c.ell, c.n_heads, c.n_layers, c.d_inner), (16, 5, 2, 1, 256));
        assert_eq!(c.mode, EncoderMode::Flat);
        assert_eq!(c.d_out(), 16);
    }

    #[test]
    fn config_is_recoverable_from_tensors() {
        let cfg = tiny();
        let m = ModelParams::<f32>::init(cfg, 7, 3, 1).unwrap();
        let back = ModelParams::infer_config(&m.store, 1, cfg.n_max).unwrap();
        assert_eq!(back.d_out(), cfg.d_out());
        assert_eq!(EncoderConfig { d_out: None, ..back }, cfg);
        let mut flat = cfg;
        flat.mode = EncoderMode::Flat;
        let m = ModelParams::<f32>::init(flat, 7, 3, 1).unwrap();
        let back = ModelParams::infer_config(&m.store, 3, 2).unwrap();
        assert_eq!((back.mode, back.d, back.ell, back.d_out()), (EncoderMode::Flat, 4, 3, 4));
        assert!(ModelParams::from_store(m.store.clone(), back, 7, 3).is_ok());
    }

    #[test]
    fn from_store_rejects_wrong_shapes() {
        let m = ModelParams::<f32>::init(tiny(), 7, 3, 1).unwrap();
        let mut store = m.store.clone();
        store.insert("sim.b2", Tensor::zeros(&[3]));
        assert!(matches!(
            ModelParams::from_store(store, tiny(), 7, 3),
            Err(ModelError::ParamShape { .. })
        ));
        assert!(matches!(
            ModelParams::from_store(m.store, tiny(), 8, 3),
            Err(ModelError::ParamShape { .. })
        ));
    }
}
