//! File formats, kernel cases and the corpus runner behind the `mimw` CLI.

pub mod case;
pub mod corpus;
pub mod oracle;
pub mod tensor_file;

pub use case::{Case, CaseError, InputFill};
pub use corpus::{discover, generate_inputs, run_case, CaseReport};
pub use tensor_file::{read_tensor, write_tensor, TensorFileError};
