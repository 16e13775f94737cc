#![allow(dead_code)]

pub mod fixture;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tkg_oneshot::dataset::{build_meta_split, Benchmark, BuildConfig, PartitionSizes};
use tkg_oneshot::kg::{Quadruple, TemporalKG};
use tkg_oneshot::model::{EncoderConfig, EncoderMode, ModelParams};
use tkg_oneshot::synth::{generate, SynthSpec};
use tkg_oneshot::tensor::{Tape, Tensor, Var};
use tkg_oneshot::train::{episode_loss, Episode};

pub const FD_STEP: f64 = 1e-3;

/// `|a − n| / max(1, |a|, |n|)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FdStats {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates whose stencil straddles a relu or hinge kink.
    pub skipped: usize,
}

impl FdStats {
    pub fn merge(self, o: FdStats) -> FdStats {
        FdStats {
            max_rel: self.max_rel.max(o.max_rel),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

/// Compares `analytic` to central differences of `f` around `x`, one
/// coordinate at a time. `f` is also sampled at `±h/2`; when the four
/// half-step slopes are not locally linear, a relu or hinge kink lies inside
/// the stencil and the coordinate is skipped. A wrong analytic gradient
/// cannot trigger this, since the test looks at `f` alone.
pub fn fd_compare(x: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> FdStats {
    let mut st = FdStats::default();
    let half = FD_STEP / 2.0;
    for i in 0..x.len() {
        let orig = x[i];
        let mut at = |dx: f64| {
            x[i] = orig + dx;
            f(x)
        };
        let v = [at(-FD_STEP), at(-half), at(0.0), at(half), at(FD_STEP)];
        x[i] = orig;
        let s: Vec<f64> = v.windows(2).map(|p| (p[1] - p[0]) / half).collect();
        let scale = s.iter().fold(1f64, |m, x| m.max(x.abs()));
        let bend = (s[0] - 2.0 * s[1] + s[2]).abs().max((s[1] - 2.0 * s[2] + s[3]).abs());
        if bend > 1e-5 * scale {
            st.skipped += 1;
            continue;
        }
        let numeric = (v[4] - v[0]) / (2.0 * FD_STEP);
        st.max_rel = st.max_rel.max(rel_err(analytic[i], numeric));
        st.checked += 1;
    }
    st
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        // keep clear of zero so relu and hinge stay differentiable at ±step
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

type OpFn = fn(&mut Tape<'_, f64>, &[Var]) -> Var;

/// Every differentiable tape op, as a closure over its inputs, with input
/// shapes.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, v| t.bmm(v[0], v[1]).unwrap()),
        ("transpose", vec![vec![2, 3, 4]], |t, v| t.transpose(v[0]).unwrap()),
        ("reshape", vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        ("add", vec![vec![3, 3], vec![3, 3]], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![vec![3, 3], vec![3, 3]], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![vec![3, 3], vec![3, 3]], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("scale", vec![vec![2, 5]], |t, v| t.scale(v[0], -1.7).unwrap()),
        ("add_scalar", vec![vec![2, 5]], |t, v| t.add_scalar(v[0], 0.3).unwrap()),
        ("add_row", vec![vec![2, 3, 4], vec![4]], |t, v| t.add_row(v[0], v[1]).unwrap()),
        ("mul_row", vec![vec![3, 4], vec![4]], |t, v| t.mul_row(v[0], v[1]).unwrap()),
        ("concat", vec![vec![3, 2], vec![3, 3]], |t, v| t.concat(&[v[0], v[1]]).unwrap()),
        ("slice_last", vec![vec![3, 6]], |t, v| t.slice_last(v[0], 2, 3).unwrap()),
        ("relu", vec![vec![4, 4]], |t, v| t.relu(v[0]).unwrap()),
        ("max_with_zero", vec![vec![4, 4]], |t, v| t.max_with_zero(v[0]).unwrap()),
        ("softmax", vec![vec![3, 5]], |t, v| t.softmax(v[0]).unwrap()),
        ("sum", vec![vec![3, 4]], |t, v| t.sum(v[0]).unwrap()),
        ("mean_all", vec![vec![3, 4]], |t, v| t.mean_all(v[0]).unwrap()),
        ("mean_axis0", vec![vec![3, 4, 2]], |t, v| t.mean(v[0], 0).unwrap()),
        ("mean_axis1", vec![vec![3, 4, 2]], |t, v| t.mean(v[0], 1).unwrap()),
        ("gather_rows", vec![vec![5, 3]], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap()),
        ("embedding_lookup", vec![vec![5, 3]], |t, v| t.embedding_lookup(v[0], &[1, 1, 3]).unwrap()),
        ("segment_mean", vec![vec![6, 3]], |t, v| t.segment_mean(v[0], &[0, 2, 2, 6]).unwrap()),
        ("normalize_rows", vec![vec![3, 5]], |t, v| t.normalize_rows(v[0], 1e-5).unwrap()),
    ]
}

/// Gradient check of one op under a random linear read-out.
pub fn check_op(shapes: &[Vec<usize>], op: OpFn, seed: u64) -> FdStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let y = op(&mut tape, &vars);
        tape.value(y).shape().to_vec()
    };
    let readout = random_tensor(&mut rng, &out_shape);
    let loss_of = |xs: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let y = op(&mut tape, &vars);
        let r = tape.constant(readout.clone());
        let prod = tape.mul(y, r).unwrap();
        let loss = tape.sum(prod).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(v, x)| g.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (tape.value(loss).item(), grads)
    };
    let (_, grads) = loss_of(&inputs);
    let mut stats = FdStats::default();
    for k in 0..inputs.len() {
        let mut data = inputs[k].data().to_vec();
        let shape = inputs[k].shape().to_vec();
        let st = fd_compare(&mut data, grads[k].data(), |x| {
            let mut xs = inputs.clone();
            xs[k] = Tensor::new(shape.clone(), x.to_vec()).unwrap();
            loss_of(&xs).0
        });
        stats = stats.merge(st);
    }
    stats
}

pub fn tiny_config(mode: EncoderMode) -> EncoderConfig {
    EncoderConfig {
        d: 4,
        ell: 2,
        n_max: 2,
        n_heads: 1,
        n_layers: 1,
        d_inner: 8,
        d_out: None,
        mode,
    }
}

/// A small random graph and one episode over it.
pub fn tiny_problem(seed: u64) -> (TemporalKG, Episode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let (ne, nr) = (6u32, 3u32);
    let mut quads = Vec::new();
    for t in 0..6u32 {
        for _ in 0..4 {
            let s = rng.gen_range(0..ne);
            let o = (s + rng.gen_range(1..ne)) % ne;
            quads.push(Quadruple::new(s, rng.gen_range(0..nr), o, t));
        }
    }
    let graph = TemporalKG::new(quads, ne as usize, nr as usize);
    let ep = Episode {
        relation: tkg_oneshot::kg::RelationId(2),
        support: Quadruple::new(0, 2, 1, 3),
        positives: vec![Quadruple::new(2, 2, 3, 4), Quadruple::new(4, 2, 5, 5)],
        negatives: vec![Quadruple::new(2, 2, 0, 4), Quadruple::new(4, 2, 1, 5)],
    };
    (graph, ep)
}

/// Gradient check of the full episode loss w.r.t. every model scalar.
pub fn check_composite(mode: EncoderMode, seed: u64) -> FdStats {
    let (graph, ep) = tiny_problem(seed);
    let mut model = ModelParams::<f64>::init(tiny_config(mode), 6, 3, seed).unwrap();
    let margin = 1.0;
    let grads = {
        let mut tape = Tape::with_params(&model.store);
        let loss = episode_loss(&mut tape, &model, &graph, &ep, margin).unwrap();
        tape.backward(loss).unwrap().into_param_grads(model.store.len())
    };
    let ids: Vec<_> = model.store.ids().collect();
    let mut stats = FdStats::default();
    for id in ids {
        let analytic = grads[id.index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape()));
        let mut data = model.store.get(id).data().to_vec();
        let st = fd_compare(&mut data, analytic.data(), |x| {
            model.store.get_mut(id).data_mut().copy_from_slice(x);
            let mut tape = Tape::with_params(&model.store);
            let loss = episode_loss(&mut tape, &model, &graph, &ep, margin).unwrap();
            tape.value(loss).item()
        });
        model.store.get_mut(id).data_mut().copy_from_slice(&data);
        stats = stats.merge(st);
    }
    stats
}

/// Mean and variance of `1/R` for `R` uniform on `1..=n`.
pub fn uniform_reciprocal_rank(n: usize) -> (f64, f64) {
    let m1: f64 = (1..=n).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64;
    let m2: f64 = (1..=n).map(|r| 1.0 / (r * r) as f64).sum::<f64>() / n as f64;
    (m1, m2 - m1 * m1)
}

/// The synthetic benchmark used by the learning experiments.
pub fn learning_bench(seed: u64) -> Benchmark {
    let spec = SynthSpec {
        seed,
        ..Default::default()
    };
    let data = generate(&spec).unwrap();
    let cfg = BuildConfig {
        thresholds: spec.suggested_thresholds(),
        w: 60,
        sizes: PartitionSizes { val: 3, test: 5 },
        seed,
    };
    Benchmark::from_split(build_meta_split(&data.quads, &cfg).unwrap(), data.vocab, spec.ell, 10)
}

/// A wider synthetic benchmark with enough meta-test queries for a
/// random-baseline estimate.
pub fn baseline_bench(seed: u64) -> Benchmark {
    let spec = SynthSpec {
        seed,
        n_sparse_rels: 40,
        ..Default::default()
    };
    let data = generate(&spec).unwrap();
    let cfg = BuildConfig {
        thresholds: spec.suggested_thresholds(),
        w: 120,
        sizes: PartitionSizes { val: 5, test: 30 },
        seed,
    };
    Benchmark::from_split(build_meta_split(&data.quads, &cfg).unwrap(), data.vocab, spec.ell, 10)
}

pub fn learning_encoder(mode: EncoderMode) -> EncoderConfig {
    EncoderConfig {
        d: 16,
        ell: 5,
        n_max: 10,
        n_heads: 4,
        n_layers: 1,
        d_inner: 256,
        d_out: None,
        mode,
    }
}
