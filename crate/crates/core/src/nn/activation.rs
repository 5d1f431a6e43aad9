use crate::error::Result;
use crate::tensor::{Float, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl<T: Float> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.record("relu", out, &[x], |args| {
            let xv = args.inputs[0].data();
            vec![Some(args.grad.iter().zip(xv).map(|(&g, &v)| if v > T::zero() { g } else { T::zero() }).collect())]
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.record("sigmoid", out, &[x], |args| {
            let y = args.output.data();
            vec![Some(args.grad.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect())]
        })
    }
}

/// Logistic function, evaluated on the side that cannot overflow.
pub fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
