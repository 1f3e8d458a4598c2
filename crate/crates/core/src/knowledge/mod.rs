//! External evidence tools and the shared vector index.

mod guidelines;
mod index;
mod pubmed;

pub use guidelines::{
    chunk_corpus, chunk_words, clean_text, index_corpus, load_corpus, ChunkingConfig, GuidelineChunk, GuidelineDoc,
    GuidelineError, GuidelineIndex, GuidelineMeta, GuidelineSearchConfig, GuidelineSearcher, GUIDELINES_UNAVAILABLE,
    NO_GUIDELINE_HITS,
};
pub use index::{rank_order, IndexEntry, IndexError, SearchHit, VectorIndex};
pub use pubmed::{
    first_sentences, render_articles, Article, CannedEutils, CannedExchange, EutilsTransport, HttpEutils, PubMedClient,
    PubMedError, API_KEY_ENV, DEFAULT_EUTILS_BASE, NO_ARTICLES, PUBMED_UNAVAILABLE,
};
