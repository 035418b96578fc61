//! Cross-domain image classification through text.
//!
//! Images are converted into textual descriptions (tags, attributes,
//! captions), wrapped in a fixed question instruction, and classified by a
//! language model that can be finetuned on the source domains and adapted to
//! an unlabeled target domain with pseudo-labels. The crate ships a small,
//! fully native reference model so that training, scoring, beam search, and
//! gradient analysis are exactly testable on a desk, and provider contracts
//! so the same pipeline can run against remote model services.
//!
//! The accompanying guide in `book/` walks through each stage; its code
//! snippets compile and run as doc-tests of this crate.

pub mod classify;
pub mod dataset;
pub mod description;
pub mod error;
pub mod eval;
pub mod prompt;
pub mod provider;
pub mod reflm;
pub mod synth;
pub mod token;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(retrieval, "../../../book/src/retrieval.md");
    chapter!(descriptions, "../../../book/src/descriptions.md");
    chapter!(prompts, "../../../book/src/prompts.md");
    chapter!(reference_model, "../../../book/src/reference-model.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(classification, "../../../book/src/classification.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
    chapter!(providers, "../../../book/src/providers.md");
    chapter!(cli, "../../../book/src/cli.md");
}
