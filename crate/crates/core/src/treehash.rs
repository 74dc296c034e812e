//! Content hashing for files and output trees.
//!
//! Determinism contracts in this crate are stated as "identical content
//! hash"; this module pins how that hash is computed: SHA-256 over the
//! sorted relative paths and raw bytes of every file under a directory.

use std::path::Path;

use sha2::{Digest, Sha256};

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

pub fn hash_str(text: &str) -> String {
    hash_bytes(text.as_bytes())
}

fn walk(dir: &Path, base: &Path, files: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, base, files)?;
        } else {
            files.push(path.strip_prefix(base).expect("under base").to_path_buf());
        }
    }
    Ok(())
}

/// Hash every file under `dir`: relative path, NUL, bytes, NUL, in sorted
/// path order.
pub fn hash_tree(dir: &Path) -> std::io::Result<String> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(&std::fs::read(dir.join(&rel))?);
        hasher.update([0u8]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_hash_sees_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.txt"), "alpha").unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "beta").unwrap();
        let h1 = hash_tree(dir.path()).unwrap();
        let h2 = hash_tree(dir.path()).unwrap();
        assert_eq!(h1, h2);

        std::fs::write(dir.path().join("sub/b.txt"), "gamma").unwrap();
        assert_ne!(hash_tree(dir.path()).unwrap(), h1);
    }

    #[test]
    fn string_hash_is_hex_sha256() {
        assert_eq!(hash_str("").len(), 64);
        assert_ne!(hash_str("a"), hash_str("b"));
    }
}
