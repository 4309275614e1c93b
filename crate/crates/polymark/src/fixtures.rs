//! Built-in bilingual fixture: a 120-token English/Chinese vocabulary with a
//! synonym dictionary, plus a deterministic prompt synthesizer.
//!
//! Layout: id 0 is an untagged `<bos>`; 24 concepts follow, each contributing
//! two English and two Chinese synonyms; then 12 English-only and 11
//! Chinese-only function words. The dictionary links every concept's four
//! tokens into one semantic cluster (48 clusters total: 24 concepts plus 24
//! singletons), which is what gives the mock translator real synonym choices
//! in both directions.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{cluster_vocabulary, BilingualDictionary, SemanticClustering};
use crate::hashing::{self, domain};
use crate::lm::{TokenSequence, Vocabulary};

/// (en primary, en synonym, zh primary, zh synonym) per concept.
const CONCEPTS: [[&str; 4]; 24] = [
    ["movie", "film", "电影", "影片"],
    ["bird", "fowl", "鸟", "飞鸟"],
    ["house", "home", "房子", "住宅"],
    ["car", "automobile", "汽车", "轿车"],
    ["book", "volume", "书", "书籍"],
    ["road", "street", "道路", "街道"],
    ["food", "meal", "食物", "餐食"],
    ["ocean", "sea", "海洋", "大海"],
    ["mountain", "peak", "山", "山峰"],
    ["doctor", "physician", "医生", "大夫"],
    ["child", "kid", "孩子", "儿童"],
    ["friend", "companion", "朋友", "伙伴"],
    ["city", "town", "城市", "城镇"],
    ["money", "cash", "钱", "现金"],
    ["work", "job", "工作", "职业"],
    ["happy", "glad", "快乐", "高兴"],
    ["big", "large", "大", "巨大"],
    ["small", "little", "小", "微小"],
    ["fast", "quick", "快", "迅速"],
    ["speak", "talk", "说", "讲"],
    ["look", "watch", "看", "观看"],
    ["eat", "consume", "吃", "食用"],
    ["beautiful", "pretty", "美丽", "漂亮"],
    ["music", "melody", "音乐", "旋律"],
];

const EN_FUNCTION_WORDS: [&str; 12] = [
    "the", "and", "of", "to", "in", "that", "with", "for", "from", "by", "about", "through",
];

const ZH_FUNCTION_WORDS: [&str; 11] = [
    "的", "了", "在", "是", "我", "你", "他", "们", "这", "那", "和",
];

/// The fixture vocabulary: 120 tokens, languages "en" and "zh".
pub fn fixture_vocabulary() -> Vocabulary {
    let mut entries: Vec<(String, Option<String>)> = vec![("<bos>".into(), None)];
    for c in &CONCEPTS {
        entries.push((c[0].into(), Some("en".into())));
        entries.push((c[1].into(), Some("en".into())));
        entries.push((c[2].into(), Some("zh".into())));
        entries.push((c[3].into(), Some("zh".into())));
    }
    for w in EN_FUNCTION_WORDS {
        entries.push((w.into(), Some("en".into())));
    }
    for w in ZH_FUNCTION_WORDS {
        entries.push((w.into(), Some("zh".into())));
    }
    Vocabulary::new(entries).expect("fixture vocabulary is well-formed")
}

/// Three dictionary pairs per concept; enough to merge all four synonyms
/// into one cluster without listing the full cross product.
pub fn fixture_dictionary() -> BilingualDictionary {
    let mut pairs = Vec::with_capacity(CONCEPTS.len() * 3);
    for c in &CONCEPTS {
        pairs.push((c[0].to_string(), c[2].to_string()));
        pairs.push((c[1].to_string(), c[2].to_string()));
        pairs.push((c[0].to_string(), c[3].to_string()));
    }
    BilingualDictionary::new(pairs)
}

/// Semantic clusters induced by the fixture dictionary: 48 clusters.
pub fn fixture_clustering() -> SemanticClustering {
    let vocab = fixture_vocabulary();
    let (clustering, graph) = cluster_vocabulary(&vocab, &fixture_dictionary())
        .expect("fixture dictionary resolves against fixture vocabulary");
    assert_eq!(graph.skipped_pairs, 0, "fixture dictionary fully resolved");
    clustering
}

/// Deterministic prompts in one language: token ids drawn uniformly from
/// that language's tags, lengths uniform in `min_len..=max_len`. Prompt `i`
/// depends only on (seed, i), not on `count`.
pub fn synth_prompts(
    vocab: &Vocabulary,
    language: &str,
    count: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Vec<TokenSequence> {
    assert!(min_len >= 1 && min_len <= max_len, "bad length range");
    let pool = vocab.ids_with_language(language);
    assert!(!pool.is_empty(), "no tokens tagged {language}");
    (0..count)
        .map(|i| {
            let key = hashing::derive_chain(seed, &[domain::PROMPT_SYNTH, i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let len = rng.random_range(min_len..=max_len);
            let ids = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            TokenSequence::new(ids, language)
        })
        .collect()
}
