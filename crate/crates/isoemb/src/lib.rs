//! Surface finite elements for isometric embedding flows of evolving metrics.

pub mod error;
pub mod forms;
pub mod mesh;
pub mod poly;
pub mod lagrange;
pub mod quad;
pub mod refgeom;
pub mod system;
pub mod regge;

pub use error::{Error, Result};
