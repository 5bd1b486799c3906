//! Corpus cleaning: markup and URL stripping, script filtering, Unicode
//! normalization, length filtering and exact line deduplication.

mod clean;
mod dedup;

pub use clean::{clean_text, CleanConfig, DedupScope, DigitPolicy};
pub use dedup::{corpus_report, dedup_corpus, CorpusStats, DocRecord};

use rayon::prelude::*;

/// A raw input document: origin identifier plus its decoded text.
#[derive(Debug, Clone)]
pub struct RawDoc {
    pub source_id: String,
    pub text: String,
}

/// Cleans every document in parallel, then deduplicates sequentially in input
/// order. The result is identical to a single-threaded run.
///
/// `input_bytes` in the returned stats counts the raw bytes handed in.
pub fn clean_documents(raw: &[RawDoc], cfg: &CleanConfig) -> (Vec<DocRecord>, CorpusStats) {
    let cleaned: Vec<DocRecord> = raw
        .par_iter()
        .map(|d| DocRecord::new(d.source_id.clone(), clean_text(&d.text, cfg)))
        .collect();
    let (docs, mut stats) = dedup_corpus(cleaned, cfg);
    stats.input_bytes = raw.iter().map(|d| d.text.len() as u64).sum();
    (docs, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_counts_raw_bytes() {
        let raw = vec![
            RawDoc {
                source_id: "a".into(),
                text: "<p>नेपालमा आज वर्षा भयो।</p>\nनेपालमा आज वर्षा भयो।".into(),
            },
            RawDoc {
                source_id: "b".into(),
                text: "hello world\nकाठमाडौं उपत्यकामा हिउँ परेन।".into(),
            },
        ];
        let cfg = CleanConfig::default();
        let (docs, stats) = clean_documents(&raw, &cfg);
        assert_eq!(docs.len(), 2);
        assert_eq!(stats.duplicates_removed, 1);
        assert_eq!(stats.lines_out, 2);
        assert_eq!(
            stats.input_bytes,
            raw.iter().map(|d| d.text.len() as u64).sum::<u64>()
        );
        assert!(stats.output_bytes <= stats.input_bytes);
    }
}
