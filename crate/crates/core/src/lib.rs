pub mod compositor;
pub mod effects;
pub mod geom;
pub mod protocol;
pub mod replay;
pub mod rng;
pub mod scene;
pub mod session;
pub mod synth;
pub mod sim;
pub mod verse;
