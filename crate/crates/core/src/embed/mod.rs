//! The language-model abstraction, the add-k n-gram reference model and
//! windowed context features built from fixed random embeddings.

mod featurize;
mod model_file;
mod ngram;
mod vocab;

pub use featurize::ContextFeaturizer;
pub use model_file::ModelBundle;
pub use ngram::{fit_ngram, LanguageModel, NGramLM};
pub use vocab::{Vocabulary, PAD, UNK};
