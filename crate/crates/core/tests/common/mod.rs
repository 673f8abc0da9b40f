#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use corpusforge::corpus::{write_corpus, write_embeddings, EmbeddingStore};
use corpusforge::{Category, ConversationTurn, ImageRef, Modality, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn text(id: &str, q: &str, a: &str) -> Sample {
    Sample {
        category: Category::TextOnly,
        turns: vec![ConversationTurn::user(q), ConversationTurn::assistant(a)],
        id: id.into(),
        images: Vec::new(),
        modality: Modality::TextOnly,
        provenance: None,
        repeat_factor: 1,
        source: "fixture".into(),
        token_length: None,
    }
}

pub fn image(id: &str, category: Category, q: &str, a: &str, w: u32, h: u32) -> Sample {
    Sample {
        category,
        turns: vec![ConversationTurn::user(q), ConversationTurn::assistant(a)],
        id: id.into(),
        images: vec![ImageRef {
            height: Some(h),
            path: format!("images/{id}.jpg"),
            width: Some(w),
        }],
        modality: Modality::ImageText,
        provenance: None,
        repeat_factor: 1,
        source: "fixture".into(),
        token_length: None,
    }
}

const WORDS: [&str; 24] = [
    "chart", "value", "axis", "bar", "line", "total", "region", "year", "growth", "share", "label", "point",
    "circle", "angle", "side", "area", "length", "graph", "table", "row", "column", "sum", "ratio", "scale",
];

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// A deterministic mixed corpus: a fifth text-only, the rest image samples
/// over four categories, with a few planted low-quality answers.
pub fn generated_corpus(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = rng(seed);
    let cats = [Category::ChartTable, Category::Mathematics, Category::GeneralVqa, Category::CaptioningKnowledge];
    let sizes = [(448, 448), (896, 448), (1344, 896), (640, 480), (448, 1792)];
    (0..n)
        .map(|i| {
            let id = format!("s{i:05}");
            let qn = rng.random_range(4..12);
            let q = format!("{}?", sentence(&mut rng, qn));
            let a = match i % 97 {
                13 => "Sorry, I cannot.".to_string(),
                29 => format!("The value is {:.5}.", rng.random_range(0.0..100.0)),
                41 => "it is the same it is the same it is the same it is the same".to_string(),
                _ => {
                    let an = rng.random_range(1..80);
                    sentence(&mut rng, an)
                }
            };
            if i % 5 == 0 {
                text(&id, &q, &a)
            } else {
                let (w, h) = sizes[rng.random_range(0..sizes.len())];
                let mut s = image(&id, cats[rng.random_range(0..cats.len())], &q, &a, w, h);
                s.repeat_factor = if i % 11 == 0 { 2 } else { 1 };
                s
            }
        })
        .collect()
}

/// Unit-ish vectors in a few loose clusters.
pub fn generated_embeddings(pool: &[Sample], dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = rng(seed);
    let centers: Vec<Vec<f32>> = (0..6)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let mut store = EmbeddingStore::new(dim);
    for s in pool {
        let c = &centers[rng.random_range(0..centers.len())];
        let v: Vec<f32> = c.iter().map(|x| x + rng.random_range(-0.2f32..0.2)).collect();
        store.insert(s.id.clone(), &v).unwrap();
    }
    store
}

pub fn write_fixture(dir: &Path, n: usize, seed: u64) {
    let pool = generated_corpus(n, seed);
    write_corpus(&pool, dir.join("corpus.jsonl")).unwrap();
    write_embeddings(&generated_embeddings(&pool, 16, seed), dir.join("image.cfe")).unwrap();
}

/// Relative path → contents for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
