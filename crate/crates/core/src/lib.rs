pub mod geom;
pub mod linalg;
pub mod linearize;
pub mod optimize;
pub mod mesh;
pub mod anderson;
pub mod app;
pub mod backward;
pub mod contact;
pub mod energy;
pub mod forward;
pub mod real;
