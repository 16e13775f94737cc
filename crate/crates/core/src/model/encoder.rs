use super::{EncoderMode, LayerIds, ModelError, ModelParams};
use crate::kg::{EntityId, HistoryWindow, Neighbor};
use crate::tensor::{ParamId, Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal table `[ell × d_model]`: even columns `sin(pos / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding<T: Real>(ell: usize, d_model: usize) -> Tensor<T> {
    Tensor::from_fn(&[ell, d_model], |idx| {
        let (pos, col) = (idx / d_model, idx % d_model);
        let i2 = (col - col % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
        T::from_f64(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Output of [`encode_batch`].
pub struct EncodedBatch {
    /// `[B × dOut]`, one row per item.
    pub h: Var,
    /// Attention weights `[B × ell × ell]`, indexed `layer * n_heads + head`.
    /// Empty in flat mode.
    pub attention: Vec<Var>,
}

/// Mean of `Wᵀ[v_r : v_e] + b` over each segment, then relu; `[S × d]`.
/// Segment `s` holds `pairs[offsets[s]..offsets[s + 1]]`.
fn aggregate<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &ModelParams<T>,
    pairs: &[Neighbor],
    offsets: &[usize],
) -> Result<Var, ModelError> {
    let segments = offsets.len() - 1;
    if pairs.is_empty() {
        return Ok(tape.constant(Tensor::zeros(&[segments, model.cfg.d])));
    }
    let rel_table = tape.param(model.ids.relation);
    let ent_table = tape.param(model.ids.entity);
    let rel_ids: Vec<usize> = pairs.iter().map(|(r, _)| r.index()).collect();
    let ent_ids: Vec<usize> = pairs.iter().map(|(_, e)| e.index()).collect();
    let vr = tape.gather_rows(rel_table, &rel_ids)?;
    let ve = tape.gather_rows(ent_table, &ent_ids)?;
    let x = tape.concat(&[vr, ve])?;
    let w = tape.param(model.ids.snap_w);
    let b = tape.param(model.ids.snap_b);
    let y = tape.matmul(x, w)?;
    let y = tape.add_row(y, b)?;
    let f = tape.segment_mean(y, offsets)?;
    Ok(tape.relu(f)?)
}

/// `softmax(Q Kᵀ / √d_k) V` over rank-3 `[B × n × d_k]` inputs; returns
/// `(output, weights)`.
fn attention<T: Real>(tape: &mut Tape<'_, T>, q: Var, k: Var, v: Var) -> Result<(Var, Var), ModelError> {
    let dk = *tape.shape(q).last().unwrap();
    let kt = tape.transpose(k)?;
    let logits = tape.bmm(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (dk as f64).sqrt())?;
    let weights = tape.softmax(logits)?;
    let out = tape.bmm(weights, v)?;
    Ok((out, weights))
}

fn layer_norm<T: Real>(tape: &mut Tape<'_, T>, x: Var, gain: Var, bias: Var) -> Result<Var, ModelError> {
    let n = tape.normalize_rows(x, LN_EPS)?;
    let n = tape.mul_row(n, gain)?;
    Ok(tape.add_row(n, bias)?)
}

/// One encoder layer over `x: [B·ell × 2d]`: multi-head self-attention within
/// each item's sequence, then the position-wise FFN, each wrapped in a
/// residual connection and layer norm.
fn encoder_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &ModelParams<T>,
    ids: &LayerIds,
    x: Var,
    batch: usize,
    weights_out: &mut Vec<Var>,
) -> Result<Var, ModelError> {
    let cfg = &model.cfg;
    let (ell, dk) = (cfg.ell, cfg.d_head());
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let mut project = |id: ParamId| -> Result<Var, ModelError> {
            let w = tape.param(id);
            let p = tape.matmul(x, w)?;
            Ok(tape.reshape(p, &[batch, ell, dk])?)
        };
        let q = project(ids.wq[h])?;
        let k = project(ids.wk[h])?;
        let v = project(ids.wv[h])?;
        let (out, weights) = attention(tape, q, k, v)?;
        weights_out.push(weights);
        heads.push(tape.reshape(out, &[batch * ell, dk])?);
    }
    let cat = tape.concat(&heads)?;
    let wo = tape.param(ids.wo);
    let att = tape.matmul(cat, wo)?;
    let res = tape.add(x, att)?;
    let (g1, b1n) = (tape.param(ids.norm1_gain), tape.param(ids.norm1_bias));
    let x1 = layer_norm(tape, res, g1, b1n)?;

    let (w1, b1, w2, b2) = (tape.param(ids.w1), tape.param(ids.b1), tape.param(ids.w2), tape.param(ids.b2));
    let hidden = tape.matmul(x1, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = tape.relu(hidden)?;
    let ffn = tape.matmul(hidden, w2)?;
    let ffn = tape.add_row(ffn, b2)?;
    let res = tape.add(x1, ffn)?;
    let (g2, b2n) = (tape.param(ids.norm2_gain), tape.param(ids.norm2_bias));
    layer_norm(tape, res, g2, b2n)
}

fn sorted(pairs: &[Neighbor]) -> impl Iterator<Item = Neighbor> {
    let mut v = pairs.to_vec();
    v.sort_unstable();
    v.into_iter()
}

/// Encodes a batch of `(entity, history)` items to `h_e` rows on `tape`.
pub fn encode_batch<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &ModelParams<T>,
    items: &[(EntityId, &HistoryWindow)],
) -> Result<EncodedBatch, ModelError> {
    let cfg = &model.cfg;
    for (_, h) in items {
        if h.len() != cfg.ell {
            return Err(ModelError::HistoryLengthMismatch {
                expected: cfg.ell,
                got: h.len(),
            });
        }
    }
    let batch = items.len();
    let ent_table = tape.param(model.ids.entity);
    match cfg.mode {
        EncoderMode::Attention => {
            let mut pairs = Vec::new();
            let mut offsets = vec![0];
            for (_, h) in items {
                for snap in &h.snapshots {
                    pairs.extend(sorted(snap));
                    offsets.push(pairs.len());
                }
            }
            let f = aggregate(tape, model, &pairs, &offsets)?;
            let self_ids: Vec<usize> = items
                .iter()
                .flat_map(|(e, _)| std::iter::repeat(e.index()).take(cfg.ell))
                .collect();
            let ve = tape.gather_rows(ent_table, &self_ids)?;
            let x = tape.concat(&[f, ve])?;
            let pe = positional_encoding::<T>(cfg.ell, cfg.d_model());
            let mut tiled = Vec::with_capacity(batch * pe.len());
            for _ in 0..batch {
                tiled.extend_from_slice(pe.data());
            }
            let pe = tape.constant(Tensor::new(vec![batch * cfg.ell, cfg.d_model()], tiled)?);
            let mut x = tape.add(x, pe)?;
            let mut attention = Vec::new();
            for ids in &model.ids.layers {
                x = encoder_layer(tape, model, ids, x, batch, &mut attention)?;
            }
            let z = tape.reshape(x, &[batch, cfg.ell * cfg.d_model()])?;
            let wstar = tape.param(model.ids.wstar.expect("attention mode has Wstar"));
            let h = tape.matmul(z, wstar)?;
            let h = tape.relu(h)?;
            Ok(EncodedBatch { h, attention })
        }
        EncoderMode::Flat => {
            let mut pairs = Vec::new();
            let mut offsets = vec![0];
            for (_, h) in items {
                let merged: Vec<Neighbor> = h.snapshots.iter().flatten().copied().collect();
                pairs.extend(sorted(&merged));
                offsets.push(pairs.len());
            }
            let f = aggregate(tape, model, &pairs, &offsets)?;
            let self_ids: Vec<usize> = items.iter().map(|(e, _)| e.index()).collect();
            let ve = tape.gather_rows(ent_table, &self_ids)?;
            let x = tape.concat(&[f, ve])?;
            let wflat = tape.param(model.ids.wflat.expect("flat mode has Wflat"));
            let h = tape.matmul(x, wflat)?;
            let h = tape.relu(h)?;
            Ok(EncodedBatch {
                h,
                attention: Vec::new(),
            })
        }
    }
}

/// `x_τ = [f : v_e]` for one snapshot, length `2d`.
pub fn snapshot_aggregate<T: Real>(
    model: &ModelParams<T>,
    snapshot: &[Neighbor],
    e: EntityId,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::with_params(&model.store);
    let pairs: Vec<Neighbor> = sorted(snapshot).collect();
    let f = aggregate(&mut tape, model, &pairs, &[0, pairs.len()])?;
    let table = tape.param(model.ids.entity);
    let ve = tape.gather_rows(table, &[e.index()])?;
    let x = tape.concat(&[f, ve])?;
    Ok(tape.value(x).clone().reshaped(&[2 * model.cfg.d])?)
}

/// `softmax(Q Kᵀ / √d_k) V` for rank-2 `Q: [n × d_k]`, `K: [m × d_k]`,
/// `V: [m × d_v]`. Returns the output and the `[n × m]` weight matrix.
pub fn scaled_dot_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let bad = || {
        ModelError::Tensor(crate::tensor::TensorError::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        })
    };
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0] {
        return Err(bad());
    }
    let mut tape: Tape<'_, T> = Tape::new();
    let lift = |t: &Tensor<T>| t.clone().reshaped(&[1, t.shape()[0], t.shape()[1]]);
    let qv = tape.constant(lift(q)?);
    let kv = tape.constant(lift(k)?);
    let vv = tape.constant(lift(v)?);
    let (out, weights) = attention(&mut tape, qv, kv, vv)?;
    let (n, m, dv) = (q.shape()[0], k.shape()[0], v.shape()[1]);
    Ok((
        tape.value(out).clone().reshaped(&[n, dv])?,
        tape.value(weights).clone().reshaped(&[n, m])?,
    ))
}

/// One full encoder layer (attention and FFN sublayers) applied to a single
/// sequence `x: [ell × 2d]`.
pub fn multi_head<T: Real>(model: &ModelParams<T>, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>, ModelError> {
    let cfg = &model.cfg;
    if x.rank() != 2 || x.shape()[1] != cfg.d_model() || x.shape()[0] != cfg.ell {
        return Err(ModelError::Tensor(crate::tensor::TensorError::ShapeMismatch {
            op: "multi_head",
            lhs: x.shape().to_vec(),
            rhs: vec![cfg.ell, cfg.d_model()],
        }));
    }
    let ids = model
        .ids
        .layers
        .get(layer)
        .ok_or_else(|| ModelError::Config(format!("no encoder layer {layer}")))?;
    let mut tape = Tape::with_params(&model.store);
    let xv = tape.constant(x.clone());
    let mut weights = Vec::new();
    let y = encoder_layer(&mut tape, model, ids, xv, 1, &mut weights)?;
    Ok(tape.value(y).clone())
}

/// `h_e` for one entity, shape `[dOut]`.
pub fn encode<T: Real>(model: &ModelParams<T>, history: &HistoryWindow, e: EntityId) -> Result<Tensor<T>, ModelError> {
    encode_with_attention(model, history, e).map(|(h, _)| h)
}

/// `h_e` plus every attention weight matrix `[ell × ell]`, ordered by layer
/// then head.
pub fn encode_with_attention<T: Real>(
    model: &ModelParams<T>,
    history: &HistoryWindow,
    e: EntityId,
) -> Result<(Tensor<T>, Vec<Tensor<T>>), ModelError> {
    let mut tape = Tape::with_params(&model.store);
    let out = encode_batch(&mut tape, model, &[(e, history)])?;
    let ell = model.cfg.ell;
    let weights = out
        .attention
        .iter()
        .map(|&w| tape.value(w).clone().reshaped(&[ell, ell]))
        .collect::<Result<Vec<_>, _>>()?;
    let h = tape.value(out.h).clone().reshaped(&[model.cfg.d_out()])?;
    Ok((h, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{RelationId, Timestamp};
    use crate::model::EncoderConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, ell: usize, heads: usize, mode: EncoderMode) -> EncoderConfig {
        EncoderConfig {
            d,
            ell,
            n_max: 4,
            n_heads: heads,
            n_layers: 1,
            d_inner: 6,
            d_out: None,
            mode,
        }
    }

    fn random_history(rng: &mut ChaCha8Rng, ell: usize, ne: u32, nr: u32) -> HistoryWindow {
        let snapshots = (0..ell)
            .map(|_| {
                let n = rng.gen_range(0..4);
                let mut s: Vec<Neighbor> = (0..n)
                    .map(|_| (RelationId(rng.gen_range(0..2 * nr)), EntityId(rng.gen_range(0..ne))))
                    .collect();
                s.sort();
                s
            })
            .collect();
        HistoryWindow {
            time: Timestamp(50),
            snapshots,
        }
    }

    fn set(model: &mut ModelParams<f64>, name: &str, data: Vec<f64>) {
        let id = model.store.id(name).unwrap();
        let shape = model.store.get(id).shape().to_vec();
        *model.store.get_mut(id) = Tensor::new(shape, data).unwrap();
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(2, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        let expect = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.row(1).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((pe.at(1, 0) - 0.84147).abs() < 1e-5);
        assert!((pe.at(1, 3) - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn snapshot_aggregate_by_hand() {
        let mut m = ModelParams::<f64>::init(cfg(2, 1, 1, EncoderMode::Attention), 3, 1, 0).unwrap();
        set(&mut m, "entity", vec![0.5, -1.0, 2.0, 0.25, 1.5, 1.0]);
        set(&mut m, "relation", vec![1.0, 2.0, -0.5, 0.5]);
        set(&mut m, "snapshot.w", vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
        set(&mut m, "snapshot.b", vec![0.05, -0.1]);
        // one neighbor (r=1, e=2): input [v_r : v_e] = [-0.5, 0.5, 1.5, 1.0]
        let x = snapshot_aggregate(&m, &[(RelationId(1), EntityId(2))], EntityId(0)).unwrap();
        let input = [-0.5, 0.5, 1.5, 1.0];
        let w = [[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, -0.8]];
        let b = [0.05, -0.1];
        let f: Vec<f64> = (0..2)
            .map(|j| (0..4).map(|i| w[i][j] * input[i]).sum::<f64>() + b[j])
            .map(|v: f64| v.max(0.0))
            .collect();
        let expect = [f[0], f[1], 0.5, -1.0];
        for (a, b) in x.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let empty = snapshot_aggregate(&m, &[], EntityId(1)).unwrap();
        assert_eq!(empty.data(), &[0.0, 0.0, 2.0, 0.25]);
    }

    #[test]
    fn zero_snapshot_weights_give_zero_f() {
        let m = ModelParams::<f64>::init(cfg(3, 1, 1, EncoderMode::Attention), 4, 2, 3).unwrap();
        let mut z = m.clone();
        for n in ["snapshot.w", "snapshot.b"] {
            let id = z.store.id(n).unwrap();
            let shape = z.store.get(id).shape().to_vec();
            *z.store.get_mut(id) = Tensor::zeros(&shape);
        }
        let x = snapshot_aggregate(&z, &[(RelationId(0), EntityId(1)), (RelationId(3), EntityId(2))], EntityId(2)).unwrap();
        assert_eq!(&x.data()[..3], &[0.0; 3]);
        assert_eq!(&x.data()[3..], m.get(m.ids.entity).row(2));
    }

    #[test]
    fn attention_trivial_cases() {
        let q = Tensor::<f64>::from_rows(&[vec![3.0, -1.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let v = Tensor::from_rows(&[vec![7.0, 8.0, 9.0]]).unwrap();
        let (out, w) = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(out.data(), v.data());
        assert_eq!(w.data(), &[1.0]);

        let k2 = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let v2 = Tensor::from_rows(&[vec![4.0, -4.0], vec![4.0, -4.0]]).unwrap();
        let (out, w) = scaled_dot_attention(&q, &k2, &v2).unwrap();
        assert_eq!(w.data(), &[0.5, 0.5]);
        assert_eq!(out.data(), &[4.0, -4.0]);

        assert!(scaled_dot_attention(&q, &v, &v).is_err());
    }

    #[test]
    fn attention_matches_scalar_loop() {
        let q = Tensor::<f64>::from_rows(&[vec![0.2, -0.4], vec![1.0, 0.3]]).unwrap();
        let k = Tensor::from_rows(&[vec![0.5, 0.1], vec![-0.3, 0.8], vec![0.9, -0.6]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.5]]).unwrap();
        let (out, w) = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (q.at(i, 0) * k.at(j, 0) + q.at(i, 1) * k.at(j, 1)) / 2f64.sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..3 {
                assert!((w.at(i, j) - logits[j].exp() / z).abs() < 1e-12);
            }
            for c in 0..2 {
                let o: f64 = (0..3).map(|j| logits[j].exp() / z * v.at(j, c)).sum();
                assert!((out.at(i, c) - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = cfg(4, 5, 2, EncoderMode::Attention);
        c.n_layers = 2;
        let m = ModelParams::<f64>::init(c, 10, 3, 1).unwrap();
        let h = random_history(&mut rng, 5, 10, 3);
        let (out, weights) = encode_with_attention(&m, &h, EntityId(4)).unwrap();
        assert_eq!(out.shape(), &[4]);
        assert_eq!(weights.len(), 4);
        for w in &weights {
            for i in 0..5 {
                let s: f64 = w.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn history_length_is_checked() {
        let m = ModelParams::<f32>::init(cfg(2, 3, 1, EncoderMode::Attention), 3, 1, 0).unwrap();
        let h = HistoryWindow::empty(Timestamp(4), 2);
        assert_eq!(
            encode(&m, &h, EntityId(0)).unwrap_err(),
            ModelError::HistoryLengthMismatch { expected: 3, got: 2 }
        );
    }

    #[test]
    fn batch_rows_match_single_encodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [EncoderMode::Attention, EncoderMode::Flat] {
            let m = ModelParams::<f64>::init(cfg(4, 3, 2, mode), 12, 3, 8).unwrap();
            let hs: Vec<HistoryWindow> = (0..6).map(|_| random_history(&mut rng, 3, 12, 3)).collect();
            let items: Vec<(EntityId, &HistoryWindow)> = hs.iter().enumerate().map(|(i, h)| (EntityId(i as u32), h)).collect();
            let mut tape = Tape::with_params(&m.store);
            let out = encode_batch(&mut tape, &m, &items).unwrap();
            let batch = tape.value(out.h);
            for (i, (e, h)) in items.iter().enumerate() {
                let single = encode(&m, h, *e).unwrap();
                for (a, b) in batch.row(i).iter().zip(single.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn snapshot_order_matters_only_with_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut h = random_history(&mut rng, 4, 10, 2);
        h.snapshots = vec![
            vec![(RelationId(0), EntityId(1))],
            vec![(RelationId(1), EntityId(2)), (RelationId(2), EntityId(5))],
            vec![],
            vec![(RelationId(3), EntityId(7))],
        ];
        let mut rev = h.clone();
        rev.snapshots.reverse();
        let att = ModelParams::<f64>::init(cfg(4, 4, 2, EncoderMode::Attention), 10, 2, 4).unwrap();
        let a = encode(&att, &h, EntityId(3)).unwrap();
        let b = encode(&att, &rev, EntityId(3)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
        let flat = ModelParams::<f64>::init(cfg(4, 4, 2, EncoderMode::Flat), 10, 2, 4).unwrap();
        let a = encode(&flat, &h, EntityId(3)).unwrap();
        let b = encode(&flat, &rev, EntityId(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_history_with_zero_params_is_zero() {
        let m = ModelParams::<f32>::init(cfg(3, 2, 1, EncoderMode::Attention), 4, 2, 0).unwrap().zeroed();
        let h = encode(&m, &HistoryWindow::empty(Timestamp(0), 2), EntityId(1)).unwrap();
        assert_eq!(h.shape(), &[3]);
        assert!(h.is_finite());
        assert!(h.data().iter().all(|&v| v == 0.0));
    }
}
