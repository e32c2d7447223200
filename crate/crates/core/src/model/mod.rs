//! The saliency generator, the conditional discriminator and their losses.
//!
//! Layers are written once against [`Graph`] and run either on a
//! differentiation tape ([`Recorder`]) or immediately ([`Eager`]).
//!
//! Parameter names: `gen.L0.{weight,bias}`, `gen.L{1..6}.{W,U}_{z,r,n}`,
//! `gen.L{1..6}.b_{z,r,n}`, `gen.L{1..6}.se.fc{1,2}.{weight,bias}`,
//! `gen.L7.{weight,bias}`, `disc.conv{1..6}.{weight,bias}` and
//! `disc.fc{1..3}.{weight,bias}`.

mod discriminator;
mod generator;
mod graph;
mod loss;

pub use discriminator::{discriminate, discriminator_forward, discriminator_shapes, fc1_inputs, init_discriminator};
pub use generator::{
    conv_gru_update, generator_stage, kaiming_uniform, multi_stage_forward, se_block, Generator, GeneratorConfig,
    DILATIONS, LEAKY_SLOPE, UPDATE_GATE_BIAS,
};
pub use graph::{Eager, Graph, Recorder};
pub use loss::{
    content_loss, discriminator_loss, gan_losses, generator_loss, ContentLoss, GeneratorObjective, LOG_FLOOR, STD_EPS,
};
