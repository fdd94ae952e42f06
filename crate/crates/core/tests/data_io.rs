mod common;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use treecoder::data_io::*;
use treecoder::Error;

fn idx_header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn hand_built_image_file() {
    let mut bytes = idx_header(0x803, &[1, 2, 2]);
    bytes.extend([0, 255, 128, 64]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.idx");
    fs::write(&path, &bytes).unwrap();
    let data = load_idx_images(&path).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data.dim(), 4);
    assert_eq!(data.row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
}

#[test]
fn gzipped_files_load_like_plain_ones() {
    let mut bytes = idx_header(0x803, &[2, 1, 3]);
    bytes.extend([1, 2, 3, 4, 5, 6]);
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("a.idx");
    let gz = dir.path().join("a.idx.gz");
    fs::write(&plain, &bytes).unwrap();
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&bytes).unwrap();
    fs::write(&gz, enc.finish().unwrap()).unwrap();
    assert_eq!(load_idx_images(&plain).unwrap(), load_idx_images(&gz).unwrap());
}

#[test]
fn wrong_magic_and_truncation_are_format_errors() {
    let p = Path::new("x.idx");
    let mut labels_as_images = idx_header(0x801, &[1]);
    labels_as_images.push(3);
    assert!(matches!(
        parse_idx_images(&labels_as_images, p),
        Err(Error::Format { .. })
    ));

    let mut short = idx_header(0x803, &[2, 2, 2]);
    short.extend([0; 5]);
    match parse_idx_images(&short, p) {
        Err(Error::Format { message, .. }) => {
            assert!(message.contains('5') && message.contains('8'), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let mut long_labels = idx_header(0x801, &[1]);
    long_labels.extend([1, 2]);
    assert!(matches!(parse_idx_labels(&long_labels, p), Err(Error::Format { .. })));
    assert!(matches!(parse_idx_labels(&[0, 0], p), Err(Error::Format { .. })));
}

#[test]
fn empty_image_file_keeps_dimension() {
    let (data, rows, cols) = parse_idx_images(&idx_header(0x803, &[0, 3, 5]), Path::new("e")).unwrap();
    assert!(data.is_empty());
    assert_eq!((data.dim(), rows, cols), (15, 3, 5));
}

#[test]
fn hand_built_label_file() {
    let mut bytes = idx_header(0x801, &[1]);
    bytes.push(7);
    assert_eq!(parse_idx_labels(&bytes, Path::new("l")).unwrap(), vec![7]);
}

#[test]
fn labels_attach_only_when_counts_match() {
    let data = Dataset::from_rows(&[[0.0], [1.0]]).unwrap();
    assert!(matches!(data.clone().with_labels(vec![1]), Err(Error::Pairing(_))));
    let labelled = data.with_labels(vec![1, 0]).unwrap();
    assert_eq!(labelled.labels(), Some(&[1, 0][..]));
    assert_eq!(labelled.class_count(), Some(2));
}

#[test]
fn csv_with_and_without_labels() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    fs::write(&a, "x1,x2,label\n0.5,1.5,3\n-1,2,0\n").unwrap();
    let data = load_csv_dataset(&a).unwrap();
    assert_eq!(data.as_flat(), &[0.5, 1.5, -1.0, 2.0]);
    assert_eq!(data.labels(), Some(&[3, 0][..]));

    let b = dir.path().join("b.csv");
    fs::write(&b, "x1,x2\n0.5,1.5\n").unwrap();
    let data = load_csv_dataset(&b).unwrap();
    assert_eq!(data.dim(), 2);
    assert!(data.labels().is_none());

    let c = dir.path().join("c.csv");
    fs::write(&c, "x1,x2\n0.5\n").unwrap();
    assert!(matches!(load_csv_dataset(&c), Err(Error::Format { .. })));
}

#[test]
fn tokenizer_rules() {
    assert_eq!(
        tokenize("Hello, WORLD! a b2 x-ray 42"),
        words(&["hello", "world", "b2", "ray", "42"])
    );
}

/// Corpus where word `w{i}` occurs `n - i` times in a single document.
fn graded_corpus(n: usize) -> Vec<Vec<String>> {
    let mut doc = Vec::new();
    for i in 0..n {
        for _ in 0..(n - i) {
            doc.push(format!("w{i:03}"));
        }
    }
    vec![doc]
}

#[test]
fn drop_window_boundaries() {
    let vocab = build_bow_vocabulary(&graded_corpus(101)).unwrap();
    assert_eq!(vocab.words(), &["w100".to_string()]);
    assert!(build_bow_vocabulary(&graded_corpus(50)).unwrap().is_empty());
    let big = build_bow_vocabulary(&graded_corpus(2200)).unwrap();
    assert_eq!(big.len(), 2000);
    assert_eq!(big.words()[0], "w100");
    assert_eq!(big.words()[1999], "w2099");
    let empty: Vec<Vec<String>> = vec![vec![]];
    assert!(matches!(build_bow_vocabulary(&empty), Err(Error::Input(_))));
}

#[test]
fn ties_straddling_the_cut_rank_lexicographically() {
    let mut docs = graded_corpus(99);
    // Lift every graded word to frequency ≥ 2 so that the two extra words tie
    // below all others, at ranks 100 and 101.
    docs.push((0..99).map(|i| format!("w{i:03}")).collect());
    docs.push(words(&["zeta", "alpha"]));
    let vocab = build_vocabulary(&docs, 100, 10).unwrap();
    assert_eq!(vocab.words(), &["zeta".to_string()]);
    let vocab = build_vocabulary(&docs, 99, 10).unwrap();
    assert_eq!(vocab.words(), &["alpha".to_string(), "zeta".to_string()]);
}

#[test]
fn max_count_normalisation() {
    let train = vec![
        words(&["apple", "apple", "pear", "fig"]),
        words(&["apple", "pear", "pear", "pear", "kiwi"]),
    ];
    let vocab = build_vocabulary(&train, 0, 10).unwrap();
    assert_eq!(vocab.words(), &words(&["pear", "apple", "fig", "kiwi"])[..]);
    assert_eq!(vocab.max_counts(), &[3, 2, 1, 1]);
    let data = vectorize_documents(&train, &vocab).unwrap();
    assert_eq!(data.row(0), &[1.0 / 3.0, 1.0, 1.0, 0.0]);
    assert_eq!(data.row(1), &[1.0, 0.5, 0.0, 1.0]);
    assert_eq!(data.dim_scale(), Some(&[3.0, 2.0, 1.0, 1.0][..]));

    let test = vec![
        words(&["apple", "apple", "apple", "apple", "unknown"]),
        words(&["nothing"]),
    ];
    let t = vectorize_documents(&test, &vocab).unwrap();
    assert_eq!(t.row(0), &[0.0, 2.0, 0.0, 0.0]);
    assert_eq!(t.row(1), &[0.0; 4]);
}

#[test]
fn vectors_match_a_hash_map_recount() {
    let text = "the cat sat on the mat while the dog sat by the door and the cat ran \
                a dog and a cat met on a mat near the door of the house by the sea";
    let docs: Vec<Vec<String>> = text.split(" a ").map(tokenize).collect();
    let vocab = build_vocabulary(&docs, 2, 50).unwrap();
    let data = vectorize_documents(&docs, &vocab).unwrap();
    let mut max = vec![0u32; vocab.len()];
    let mut counts = Vec::new();
    for doc in &docs {
        let mut tally: HashMap<&str, u32> = HashMap::new();
        for t in doc {
            *tally.entry(t.as_str()).or_default() += 1;
        }
        let row: Vec<u32> = vocab
            .words()
            .iter()
            .map(|w| tally.get(w.as_str()).copied().unwrap_or(0))
            .collect();
        for (m, c) in max.iter_mut().zip(&row) {
            *m = (*m).max(*c);
        }
        counts.push(row);
    }
    for (i, row) in counts.iter().enumerate() {
        let expected: Vec<f64> = row
            .iter()
            .zip(&max)
            .map(|(&c, &m)| f64::from(c) / f64::from(m))
            .collect();
        assert_eq!(data.row(i), &expected[..]);
    }
    for j in 0..vocab.len() {
        let col_max = (0..data.len()).map(|i| data.row(i)[j]).fold(0.0, f64::max);
        assert_eq!(col_max, 1.0);
    }
}

#[test]
fn vocabulary_tsv_round_trip() {
    let docs = vec![words(&["one", "two", "two", "three", "three", "three"])];
    let vocab = build_vocabulary(&docs, 0, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.tsv");
    vocab.save(&path).unwrap();
    assert_eq!(Vocabulary::load(&path).unwrap(), vocab);
}

#[test]
fn corpus_directory_labels_by_category() {
    let dir = tempfile::tempdir().unwrap();
    for (cat, name, body) in [
        ("sci", "1.txt", "space orbit"),
        ("rec", "2.txt", "hockey goal"),
        ("sci", "0.txt", "rocket"),
    ] {
        fs::create_dir_all(dir.path().join(cat)).unwrap();
        fs::write(dir.path().join(cat).join(name), body).unwrap();
    }
    let corpus = load_corpus_dir(dir.path()).unwrap();
    assert_eq!(corpus.categories, vec!["rec".to_string(), "sci".to_string()]);
    assert_eq!(corpus.documents, vec!["hockey goal", "rocket", "space orbit"]);
    assert_eq!(corpus.labels, Some(vec![0, 1, 1]));

    let lines = dir.path().join("lines.txt");
    fs::write(&lines, "first doc\n\nsecond doc\n").unwrap();
    let corpus = load_corpus_lines(&lines).unwrap();
    assert_eq!(corpus.documents.len(), 2);
    assert!(corpus.labels.is_none());
}

#[test]
fn split_is_a_seeded_partition() {
    let (train, test) = train_test_split(10, 0.6, 3);
    assert_eq!((train.len(), test.len()), (6, 4));
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(train_test_split(10, 0.6, 3), (train, test));
}

#[test]
fn synthetic_clusters() {
    let data = make_synthetic_clusters(4, 25, 3, 0.0, 9).unwrap();
    assert_eq!(data.len(), 100);
    for c in 0..4 {
        let first = data.row(c * 25);
        assert!(first.iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..25 {
            assert_eq!(data.row(c * 25 + i), first);
            assert_eq!(data.labels().unwrap()[c * 25 + i], c as u32);
        }
    }
    let noisy = make_synthetic_clusters(4, 25, 3, 0.1, 9).unwrap();
    assert_eq!(noisy, make_synthetic_clusters(4, 25, 3, 0.1, 9).unwrap());
    assert_ne!(noisy, data);
}

#[test]
fn desk_fixture_shapes() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist-desk");
    let train = load_idx_images(root.join("train-images-idx3-ubyte.gz")).unwrap();
    let labels = load_idx_labels(root.join("train-labels-idx1-ubyte.gz")).unwrap();
    assert_eq!((train.len(), train.dim()), (1000, 784));
    let train = train.with_labels(labels).unwrap();
    assert_eq!(train.class_count(), Some(10));
    let test = load_idx_images(root.join("t10k-images-idx3-ubyte.gz")).unwrap();
    assert_eq!((test.len(), test.dim()), (500, 784));
    assert!(train.as_flat().iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #[test]
    fn idx_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>(), n in 0usize..6) {
        let mut r = common::rng(seed);
        let bytes: Vec<u8> = (0..n * rows * cols).map(|_| rand::Rng::random(&mut r)).collect();
        let data = Dataset::new(rows * cols, bytes.iter().map(|&b| f64::from(b) / 255.0).collect()).unwrap();
        let encoded = encode_idx_images(&data, rows, cols).unwrap();
        prop_assert_eq!(&encoded[16..], &bytes[..]);
        let (back, r2, c2) = parse_idx_images(&encoded, Path::new("p")).unwrap();
        prop_assert_eq!((r2, c2), (rows, cols));
        prop_assert_eq!(back, data);

        let labels: Vec<u32> = bytes.iter().map(|&b| u32::from(b % 10)).collect();
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels).unwrap(), Path::new("l")).unwrap(), labels);
    }

    #[test]
    fn vocabulary_ignores_document_order(seed in any::<u64>(), n_docs in 1usize..8) {
        use rand::seq::SliceRandom;
        let mut r = common::rng(seed);
        let pool = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let mut docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| (0..rand::Rng::random_range(&mut r, 1..12)).map(|_| pool[rand::Rng::random_range(&mut r, 0..pool.len())].to_string()).collect())
            .collect();
        let a = build_vocabulary(&docs, 2, 4).unwrap();
        docs.shuffle(&mut r);
        let b = build_vocabulary(&docs, 2, 4).unwrap();
        prop_assert_eq!(a, b);
    }
}
