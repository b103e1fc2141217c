//! Data preparation: synthetic corpora, mesh and image conversion, virtual
//! scans, scene cubes and training-time augmentation.

pub mod augment;
pub mod corpus;
pub mod image;
pub mod mesh;
pub mod scan;

pub use augment::{augment, random_input_dropout, AugmentConfig};
pub use corpus::{
    make_synthetic_corpus, read_corpus, room_scene, write_corpus, Corpus, CorpusKind, CorpusManifest, CorpusSpec,
};
pub use image::{format_pgm, parse_pgm, pixels_to_pointcloud, read_pgm, GrayImage};
pub use mesh::{parse_off, read_off, sample_mesh_surface, TriangleMesh};
pub use scan::{
    extract_cubes, floor_centroid, merge_votes, scan_from, spearman, virtual_scan, visibility_by_depth, Cube,
    CubeConfig, CubePrediction, Scan, ScanCamera, ScanConfig,
};
