//! Text formats, JSON run reports, performance profiles and the verification
//! harness.

mod dense;
mod profile;
mod report;
mod rudy;
mod sdpa;
mod verify;

pub use dense::{parse_dense_matrix, parse_symmetric_matrix, write_dense_matrix};
pub use profile::{performance_profile, ProfileCurve, ProfileMetric, ProfileSet};
pub use report::{RunReport, SCHEMA_VERSION};
pub use rudy::{parse_graph_rudy, write_graph_rudy};
pub use sdpa::{parse_sdpa_sparse, write_sdpa_sparse, SdpaData};
pub use verify::{fd_gradient_audit, verify_instance, OracleCheck, ValueCheck, VerificationRecord, VerifyOptions};
