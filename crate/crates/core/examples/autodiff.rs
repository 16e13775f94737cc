//! Reverse-mode gradients on a small least-squares problem, then Adam steps.

use tkg_oneshot::tensor::{AdamState, ParamStore, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]])?;
    let y = Tensor::<f64>::from_rows(&[vec![1.0], vec![2.0], vec![3.0]])?;

    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::zeros(&[2, 1]));
    let mut adam = AdamState::new(&store, 0.1);

    for step in 0..=200 {
        let (loss, grads) = {
            let mut tape = Tape::with_params(&store);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let wv = tape.param(w);
            let pred = tape.matmul(xv, wv)?;
            let err = tape.sub(pred, yv)?;
            let sq = tape.mul(err, err)?;
            let loss = tape.mean_all(sq)?;
            let value = tape.value(loss).item();
            (value, tape.backward(loss)?.into_param_grads(store.len()))
        };
        if step % 50 == 0 {
            println!("step {step:3}  loss {loss:.6}  w = {:?}", store.get(w).data());
        }
        adam.step(&mut store, &grads)?;
    }
    Ok(())
}
