//! RPC camera model, geographic conversion and ray generation.

mod bounds;
mod rpc;
pub mod utm;

pub use bounds::{make_ray, Ray, SceneBounds};
pub use rpc::{rpc_basis, Normalization, RpcModel, RPC_TERMS};
pub use utm::{Hemisphere, UtmZone};
