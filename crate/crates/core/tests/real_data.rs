//! Checks against the released UD treebanks. Runs only when `XNEUTR_UD_DIR`
//! points at a directory holding the standard `<tb>-ud-<split>.conllu` files.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use xneutr_core::{parse_conllu, preprocess, DepRel, Split, Task};

const SPLIT_SIZES: [(&str, [usize; 3]); 3] = [
    ("en_gum", [4287, 784, 890]),
    ("it_vit", [8277, 743, 1067]),
    ("el_gdt", [1662, 403, 456]),
];

fn ud_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("XNEUTR_UD_DIR").map(PathBuf::from);
    if dir.is_none() {
        eprintln!("XNEUTR_UD_DIR not set; skipping treebank checks");
    }
    dir
}

#[test]
fn split_sizes_match_the_released_treebanks() {
    let Some(dir) = ud_dir() else { return };
    for (tb, sizes) in SPLIT_SIZES {
        for (split, want) in Split::ALL.iter().zip(sizes) {
            let name = format!("{tb}-ud-{}.conllu", split.file_stem());
            let path = dir.join(&name);
            let parsed =
                parse_conllu(BufReader::new(File::open(&path).unwrap()), &name, *split).unwrap();
            assert_eq!(parsed.len(), want, "{name}");
            let pre = preprocess(parsed, Task::Dep).unwrap();
            assert_eq!(
                pre.sentences.len(),
                want,
                "{name}: no sentence should empty out"
            );
            for s in &pre.sentences {
                assert!(s.raw.is_empty());
                assert!(s.words.iter().all(|w| w.deprel_subtype.is_none()));
                assert!(s
                    .dep_examples()
                    .all(|i| s.words[i - 1].deprel != DepRel::Root));
            }
        }
    }
}
