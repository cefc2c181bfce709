//! Core library for graspforge: bimanual grasp synthesis by bilevel
//! wrench-error optimization, grasp filtering and ranking, and staged
//! demonstration-trajectory generation.

pub mod contact;
pub mod force_qp;
pub mod geometry;
pub mod kinematics;
pub mod synthesis;
pub mod transform;
