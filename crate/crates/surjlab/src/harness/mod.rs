//! End-to-end inversion drivers: they pick the right solver for each
//! architecture, run the token-by-token inductions, and re-verify every
//! recovered input by replaying it through the forward map. The replay
//! residual is the one reported; solver-internal residuals are treated
//! as hints only.

mod battery;
mod diffusion;
mod policy;
mod postln;
mod preln;
mod retention_seq;
mod sequence;
mod witness;

pub use battery::{run_verdict_battery, RowEvidence, Verdict, VerdictReport, VerdictRow};
pub use diffusion::{invert_diffusion, DiffusionInversion, DiffusionSchedule, VelocityNet};
pub use policy::invert_interleaved_policy;
pub use postln::postln_local_surjectivity_check;
pub use preln::{invert_preln_block, invert_preln_wrap};
pub use retention_seq::invert_retention_sequence;
pub use sequence::invert_transformer_sequence;
pub use witness::{
    attention_unreachable_witness, attention_unreachable_witness_with,
    relu_mlp_unreachable_witness, AttentionWitnessOptions, Witness, WitnessKind,
};
