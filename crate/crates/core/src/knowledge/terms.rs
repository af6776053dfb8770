//! Content-term extraction and a small rule-based subject chunker shared by
//! the knowledge sources and the self-talk prefix instantiation.

use std::collections::BTreeSet;

use crate::model::Instance;

/// Fixed English stopword list used for term extraction.
pub const STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan", "shan't",
    "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't", "wouldn",
    "wouldn't",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

fn words_of(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let trimmed: String = w
            .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
            .to_lowercase();
        (!trimmed.is_empty()).then_some(trimmed)
    })
}

/// Lowercased content words: stopwords removed, length >= 3.
pub fn content_terms(text: &str) -> BTreeSet<String> {
    words_of(text)
        .filter(|w| w.chars().count() >= 3 && !is_stopword(w))
        .collect()
}

/// Terms from the context and question versus terms from each answer
/// choice, with choice attribution.
pub fn extract_terms(inst: &Instance) -> (BTreeSet<String>, Vec<BTreeSet<String>>) {
    let mut context_terms = BTreeSet::new();
    if let Some(c) = &inst.context {
        context_terms.extend(content_terms(c));
    }
    if let Some(q) = &inst.question {
        context_terms.extend(content_terms(q));
    }
    let choice_terms = inst.choices.iter().map(|c| content_terms(c)).collect();
    (context_terms, choice_terms)
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our",
    "their", "some", "any", "no", "every", "each", "one",
];

const FINITE_VERBS: &[&str] = &[
    "is", "are", "was", "were", "am", "has", "have", "had", "do", "does", "did", "will", "would",
    "can", "could", "may", "might", "must", "shall", "should", "went", "got", "goes", "made",
    "makes", "took", "takes", "let", "lets", "said", "says", "felt", "feels", "looked", "looks",
    "decided", "decides", "fought", "fights", "kept", "keeps", "found", "finds", "gave", "gives",
    "told", "tells", "asked", "asks", "saw", "sees", "knew", "knows", "thought", "thinks",
    "wanted", "wants", "needed", "needs", "tried", "tries", "came", "comes", "put", "puts",
    "set", "sets", "became", "becomes", "left", "leaves", "brought", "brings", "ate", "eats",
    "ran", "runs", "wrote", "writes", "spent", "spends", "met", "meets", "paid", "pays",
    "stood", "stands", "won", "wins", "lost", "loses", "grew", "grows", "broke", "breaks",
];

fn looks_like_finite_verb(word: &str) -> bool {
    if FINITE_VERBS.contains(&word) {
        return true;
    }
    // Regular past tense.
    word.len() > 4 && word.ends_with("ed")
}

/// First noun-phrase head before the first finite verb. A heuristic, not a
/// parser: determiners and adjectives before the head are skipped by taking
/// the last candidate word seen before the verb.
pub fn syntactic_subject(text: &str) -> Option<String> {
    let mut candidate: Option<&str> = None;
    for raw in text.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
        if word.is_empty() {
            continue;
        }
        let lower = word.to_lowercase();
        if looks_like_finite_verb(&lower) {
            return candidate.map(|c| c.to_string());
        }
        if !DETERMINERS.contains(&lower.as_str()) {
            candidate = Some(word);
        }
        // Noun phrases rarely run past the first clause boundary.
        if raw.ends_with(',') || raw.ends_with(';') {
            break;
        }
    }
    candidate.map(|c| c.to_string())
}
