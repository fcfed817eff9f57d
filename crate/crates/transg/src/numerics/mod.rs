//! Dense f64 tensor engine with reverse-mode automatic differentiation,
//! a bias-corrected Adam optimizer, a symmetric Jacobi eigensolver, and a
//! deterministic seeded RNG.
//!
//! ```
//! use transg::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
//! let squared = tape.mul(x, x).unwrap();
//! let loss = tape.sum_all(squared);
//! tape.backward(loss).unwrap();
//! // d/dx sum(x^2) = 2x
//! assert_eq!(tape.grad(x).unwrap().data, vec![2.0, 4.0, 6.0, 8.0]);
//! ```

pub mod adam;
pub mod binding;
pub mod eig;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use binding::Binding;
pub use eig::sym_eig;
pub use param::{Param, ParamSet};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
