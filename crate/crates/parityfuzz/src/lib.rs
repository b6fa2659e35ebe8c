//! Cross-compiler differential fuzzing for Solidity toolchains.
//!
//! The pipeline has three stages: mutation-rule generation from
//! compiler/executor sources ([`rulegen`]), reward-guided fine-grained
//! mutation of seed programs ([`mutator`], [`policy`]), and execution-based
//! inconsistency detection across toolchains ([`toolchain`], [`codec`],
//! [`oracle`]). The [`campaign`] module wires the loop together and backs
//! the `parityfuzz` CLI.

pub mod campaign;
pub mod codec;
pub mod llm;
pub mod mutator;
pub mod oracle;
pub mod policy;
pub mod rulegen;
pub mod solsrc;
pub mod toolchain;
pub mod types;
pub mod value;

pub use types::{
    BoundaryCondition, CompileOutcome, CompileStatus, CoverageSnapshot, ExecOutcome, ExecStatus,
    FeatureTag, InconsistencyClass, InconsistencyRecord, MutationRule, RuleAction, RuleKind,
    SeedProgram, ToolchainId, TriggerKind,
};
pub use value::{canonical_equal, CanonicalValue};
