//! Component densities: vMF for frame embeddings, cACG for spatial vectors.

pub mod bessel;
pub mod cacg;
pub mod vmf;

pub use cacg::{cacg_log_pdf, cacg_m_step, CacgComponent, CacgParams, CacgUpdate, PlanarObs};
pub use vmf::{sample_vmf, vmf_log_pdf, vmf_m_step, VmfParams, VmfUpdate, KAPPA_MAX};
