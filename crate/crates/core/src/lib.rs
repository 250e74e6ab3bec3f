pub mod alpha;
pub mod certified;
pub mod error;
pub mod index;
pub mod dyadic;
pub mod danger;
pub mod engine;
pub mod certify;
pub mod bounds;

pub use error::{Error, Result};

/// Default numerator type; levels up to 126.
pub type Index = u128;
pub type DyadicInterval = dyadic::DyadicInterval<Index>;
pub type DyadicUnion = dyadic::DyadicUnion<Index>;
pub type DangerSet = danger::DangerSet<Index>;
pub type Survivor = engine::Survivor<Index>;
