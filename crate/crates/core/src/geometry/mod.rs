//! Background meshes, polygonal reference domains, cut-cell classification and
//! cut-cell quadrature.

mod cut;
mod mesh;
mod polygon;
mod quadrature;

pub use cut::{
    classify_elements, ActiveMesh, BoundarySegment, CellKind, Face, FaceAxis, Piece, Side,
    Trapezoid,
};
pub use mesh::ReferenceMesh;
pub use polygon::{EdgeKind, PolygonDomain};
pub use quadrature::{gauss_legendre, BoundaryQuadrature, QuadratureCell};
