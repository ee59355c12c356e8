//! Vector file formats, preprocessing, and the index container.

mod container;
mod preprocess;
mod vectors;

pub use container::{load_index, save_index, IndexMeta, StoredIndex, FORMAT_VERSION};
pub use preprocess::{apply_preprocess, PreprocessSpec};
pub use vectors::{
    read_ivecs_rows, read_vectors, read_vectors_from, read_vectors_range, write_ivecs_rows, write_vectors,
    write_vectors_to, VecFormat, VectorSet,
};
