use super::{encode_batch, ModelError, ModelParams};
use crate::kg::{EntityId, TemporalKG, Timestamp};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

/// Pair representations `[h_s : v_s : h_o : v_o]` as rows of a
/// `[P × pair_dim]` matrix. Each pair names the rows of `h` holding `h_s`
/// and `h_o` and the entities whose embeddings supply `v_s` and `v_o`.
pub fn pair_rep_batch<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &ModelParams<T>,
    h: Var,
    pairs: &[(usize, EntityId, usize, EntityId)],
) -> Result<Var, ModelError> {
    let table = tape.param(model.ids.entity);
    let hs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let vs: Vec<usize> = pairs.iter().map(|p| p.1.index()).collect();
    let ho: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let vo: Vec<usize> = pairs.iter().map(|p| p.3.index()).collect();
    let parts = [
        tape.gather_rows(h, &hs)?,
        tape.gather_rows(table, &vs)?,
        tape.gather_rows(h, &ho)?,
        tape.gather_rows(table, &vo)?,
    ];
    Ok(tape.concat(&parts)?)
}

/// Residual network `W2·relu(W1 x + b1) + b2 + x`, row-wise over `[P × pair_dim]`.
pub fn transform_var<T: Real>(tape: &mut Tape<'_, T>, model: &ModelParams<T>, x: Var) -> Result<Var, ModelError> {
    let ids = &model.ids;
    let (w1, b1, w2, b2) = (
        tape.param(ids.sim_w1),
        tape.param(ids.sim_b1),
        tape.param(ids.sim_w2),
        tape.param(ids.sim_b2),
    );
    let hidden = tape.matmul(x, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, w2)?;
    let out = tape.add_row(out, b2)?;
    Ok(tape.add(out, x)?)
}

/// Pair representation of `(s, o)` at time `t`, histories drawn from `graph`.
pub fn pair_rep<T: Real>(
    model: &ModelParams<T>,
    graph: &TemporalKG,
    s: EntityId,
    o: EntityId,
    t: Timestamp,
) -> Result<Tensor<T>, ModelError> {
    let cfg = &model.cfg;
    let hs = graph.temporal_neighborhood(s, t, cfg.ell, cfg.n_max);
    let ho = graph.temporal_neighborhood(o, t, cfg.ell, cfg.n_max);
    let mut tape = Tape::with_params(&model.store);
    let enc = encode_batch(&mut tape, model, &[(s, &hs), (o, &ho)])?;
    let rep = pair_rep_batch(&mut tape, model, enc.h, &[(0, s, 1, o)])?;
    Ok(tape.value(rep).clone().reshaped(&[cfg.pair_dim()])?)
}

fn as_row<T: Real>(x: &Tensor<T>, dim: usize, op: &'static str) -> Result<Tensor<T>, ModelError> {
    if x.len() != dim {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![dim],
        }
        .into());
    }
    Ok(x.clone().reshaped(&[1, dim])?)
}

/// The similarity transform applied to one pair representation.
pub fn transform<T: Real>(model: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let dim = model.cfg.pair_dim();
    let mut tape = Tape::with_params(&model.store);
    let xv = tape.constant(as_row(x, dim, "transform")?);
    let y = transform_var(&mut tape, model, xv)?;
    Ok(tape.value(y).clone().reshaped(&[dim])?)
}

/// Inner product of the transformed support and query representations.
pub fn score<T: Real>(model: &ModelParams<T>, support: &Tensor<T>, query: &Tensor<T>) -> Result<f64, ModelError> {
    let a = transform(model, support)?;
    let b = transform(model, query)?;
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "score",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| x.as_f64() * y.as_f64()).sum())
}
