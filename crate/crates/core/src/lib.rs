//! Relative-base-address chaining of array address computations, exit-point
//! error detectors, and a fault-injecting interpreter for evaluating them.

pub mod address;
pub mod campaign;
pub mod cfg;
pub mod interp;
pub mod ir;
pub mod kernels;
pub mod transform;

/// Concrete address word used by the interpreter.
pub type Addr = u64;
/// Concrete signed index used by the interpreter.
pub type Index = i64;

pub use address::{fba_address, rba_address, relative_index, AddressWord};
pub use cfg::{analyze, CfgFacts};
pub use interp::{classify, Arg, ErrorModel, ExecResult, FaultSpec, Interpreter, MemoryImage, Outcome, OutcomeKind};
pub use ir::{parse_ir, print_ir, Function};
pub use transform::{transform, transform_with, TransformError, TransformOptions, TransformReport};
pub use campaign::{compare_report, run_campaign, CampaignConfig, CampaignResult, Variant};
