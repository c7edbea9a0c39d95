//! Heuristic part-of-speech tagging for normalized tweet tokens.
//!
//! The refinement rules only need to separate nominal tokens from
//! closed-class and obviously non-nominal ones, so a lexicon plus a few
//! suffix rules stands in for a full tweet tagger. The tagger is an open
//! seam: anything producing [`PosTaggedToken`]s can replace it upstream of
//! the POS filter.

use std::collections::HashSet;
use std::sync::LazyLock;

/// Coarse tagset. `Other` covers numbers, symbols, and anything the
/// heuristic cannot place.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Noun,
    Propn,
    Pron,
    Verb,
    Adj,
    Adv,
    Det,
    Adp,
    Conj,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PosTaggedToken {
    pub token: String,
    pub tag: PosTag,
}

static PRONOUNS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "i",
        "me",
        "my",
        "mine",
        "myself",
        "we",
        "us",
        "our",
        "ours",
        "ourselves",
        "you",
        "your",
        "yours",
        "yourself",
        "yourselves",
        "he",
        "him",
        "his",
        "himself",
        "she",
        "her",
        "hers",
        "herself",
        "it",
        "its",
        "itself",
        "they",
        "them",
        "their",
        "theirs",
        "themselves",
        "who",
        "whom",
        "whose",
        "what",
        "which",
        "someone",
        "somebody",
        "something",
        "anyone",
        "anybody",
        "anything",
        "everyone",
        "everybody",
        "everything",
        "nobody",
        "nothing",
    ])
});

static DETERMINERS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "the", "a", "an", "this", "that", "these", "those", "some", "any", "no", "every", "each",
        "either", "neither", "all", "both", "another", "such",
    ])
});

static ADPOSITIONS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "among",
        "into", "through", "during", "before", "after", "above", "below", "to", "from", "up",
        "down", "out", "off", "over", "under", "near", "until", "within", "without", "toward",
        "towards", "upon", "onto", "across", "behind", "beyond", "around", "via", "per",
    ])
});

static CONJUNCTIONS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "and", "or", "but", "nor", "so", "yet", "if", "because", "while", "although", "though",
        "unless", "since", "whereas", "whether", "as", "than", "when", "where",
    ])
});

static AUXILIARIES: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "is", "am", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having",
        "do", "does", "did", "doing", "done", "will", "would", "can", "could", "shall", "should",
        "may", "might", "must", "dont", "cant", "wont", "didnt", "doesnt", "isnt", "arent",
        "wasnt", "werent", "hasnt", "havent", "wouldnt", "couldnt", "shouldnt", "aint", "im",
        "ive", "youre", "theyre", "weve", "hes", "shes",
    ])
});

static ADVERBS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "not", "very", "too", "also", "just", "never", "always", "often", "soon", "now", "then",
        "here", "there", "again", "still", "almost", "already", "maybe", "perhaps", "really",
        "ever", "even", "only",
    ])
});

static ADJECTIVES: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "good", "bad", "new", "old", "great", "big", "small", "high", "low", "holy", "sacred",
        "corrupt", "honest", "strong", "safe", "proud", "true",
    ])
});

static VERB_STEMS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    HashSet::from([
        "go", "went", "gone", "ask", "look", "say", "said", "make", "made", "take", "took", "want",
        "use", "find", "found", "give", "gave", "tell", "told", "work", "call", "try", "need",
        "feel", "felt", "leave", "left", "put", "mean", "meant", "keep", "kept", "let", "begin",
        "began", "help", "talk", "turn", "start", "show", "hear", "heard", "play", "run", "ran",
        "move", "live", "believe", "bring", "brought", "happen", "write", "wrote", "sit", "sat",
        "stand", "stood", "lose", "lost", "pay", "paid", "meet", "met", "send", "sent", "stay",
        "fall", "fell", "reach", "kill", "vote", "pray", "bless", "love", "hate", "donate",
        "think", "thought", "know", "knew", "get", "got", "see", "saw", "come", "came", "watch",
        "wait", "change", "protect", "touch", "maintain", "strip", "hit", "hurt", "spoke", "speak",
        "ban", "stop",
    ])
});

fn verb_by_suffix(lower: &str) -> bool {
    if !lower.is_ascii() {
        return false;
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = lower.strip_suffix(suffix) {
            if stem.len() >= 2
                && (VERB_STEMS.contains(stem)
                    || VERB_STEMS.contains(format!("{stem}e").as_str())
                    // doubled final consonant: "stopped" -> "stop"
                    || (stem.len() >= 3
                        && stem.as_bytes()[stem.len() - 1] == stem.as_bytes()[stem.len() - 2]
                        && VERB_STEMS.contains(&stem[..stem.len() - 1])))
            {
                return true;
            }
        }
    }
    false
}

/// Tag each token. Closed-class words take their lexicon class; a
/// capitalized token after the first position is treated as a proper
/// noun; `-ly` maps to adverb and `-ing`/`-ed` on a lexicon verb stem to
/// verb; everything else defaults to noun.
pub fn pos_tag(tokens: &[String]) -> Vec<PosTaggedToken> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, token)| {
            let tag = tag_one(token, i);
            PosTaggedToken {
                token: token.clone(),
                tag,
            }
        })
        .collect()
}

fn tag_one(token: &str, position: usize) -> PosTag {
    if token == "AT_USER" {
        return PosTag::Propn;
    }
    let lower = token.to_lowercase();
    let lower = lower.as_str();
    if PRONOUNS.contains(lower) {
        return PosTag::Pron;
    }
    if DETERMINERS.contains(lower) {
        return PosTag::Det;
    }
    if ADPOSITIONS.contains(lower) {
        return PosTag::Adp;
    }
    if CONJUNCTIONS.contains(lower) {
        return PosTag::Conj;
    }
    if AUXILIARIES.contains(lower) {
        return PosTag::Verb;
    }
    if ADVERBS.contains(lower) {
        return PosTag::Adv;
    }
    if ADJECTIVES.contains(lower) {
        return PosTag::Adj;
    }
    if VERB_STEMS.contains(lower) {
        return PosTag::Verb;
    }
    if token.chars().all(|c| c.is_ascii_digit()) {
        return PosTag::Other;
    }
    if position > 0 && token.chars().next().is_some_and(char::is_uppercase) {
        return PosTag::Propn;
    }
    if lower.len() > 3 && lower.ends_with("ly") {
        return PosTag::Adv;
    }
    if verb_by_suffix(lower) {
        return PosTag::Verb;
    }
    PosTag::Noun
}
