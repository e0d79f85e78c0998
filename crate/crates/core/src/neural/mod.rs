//! Neural surrogate: the tanh network, its input-derivative jets, and a reverse-mode tape.

pub mod jet;
pub mod network;
pub mod tape;

pub use jet::Jet;
pub use network::{
    forward_batch, forward_jet, init_network, layer_slots, Architecture, BatchForward, JetKind, LayerSlot,
    NetworkParameters, DT, DZ, DZZ, V,
};
pub use tape::{evaluate_with_gradient, Gradients, NetworkBatch, OpKind, Tape, Var};
